"""Call-decision and region-decision diagnostics, judge agreement, eval reports."""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import Iterable, Sequence

import numpy as np

from .geometry import CROP_RECTS, CropSet, InvalidInputError, crop_set_area, rect_iou
from .reward import HR, LR
from .tokens import TokenAccount, rtr_aggregate

RELAXED_IOU = 0.25


@dataclass
class EvalRecord:
    sample_id: str
    label: str
    pred_crops: CropSet
    target_crops: CropSet
    correct: bool
    account: TokenAccount

    def __post_init__(self):
        if self.label not in (LR, HR):
            raise InvalidInputError(f"label must be LR or HR, got {self.label!r}")
        self.pred_crops = CropSet(self.pred_crops)
        self.target_crops = CropSet(self.target_crops)


@dataclass
class CdpReport:
    n: int
    accuracy: float
    rtr: float
    call_rate: float
    call_precision: float | None
    call_recall: float | None
    call_f1: float | None
    fpr: float | None
    exact_match: float | None
    relaxed_match: float | None
    avg_area: float | None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _ratio(num: float, den: float) -> float | None:
    return num / den if den else None


def f1(precision: float | None, recall: float | None) -> float | None:
    if precision is None or recall is None:
        return None
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def call_confusion(records: Sequence[EvalRecord]) -> dict:
    """Tool invocation as a classifier: positive class is HR, predicted positive iff C != {}.

    Ratios with an empty denominator come back as ``None``.
    """
    if not records:
        raise InvalidInputError("call_confusion over no records")
    tp = sum(1 for r in records if r.label == HR and r.pred_crops)
    fp = sum(1 for r in records if r.label == LR and r.pred_crops)
    fn = sum(1 for r in records if r.label == HR and not r.pred_crops)
    n_lr = sum(1 for r in records if r.label == LR)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return {"precision": precision, "recall": recall, "f1": f1(precision, recall),
            "fpr": _ratio(fp, n_lr)}


def region_match(pred: Iterable[str], target: Iterable[str]) -> tuple[bool, bool]:
    """(exact, relaxed): some predicted rect equals / overlaps (IoU >= 0.25) some target rect."""
    pred, target = CropSet(pred), CropSet(target)
    if not pred or not target:
        raise InvalidInputError("region_match needs non-empty predicted and target sets")
    exact = any(CROP_RECTS[p] == CROP_RECTS[t] for p in pred for t in target)
    relaxed = any(rect_iou(CROP_RECTS[p], CROP_RECTS[t]) >= RELAXED_IOU for p in pred for t in target)
    return exact, relaxed


def judge_agreement(labels_a: Sequence[str], labels_b: Sequence[str]):
    """Joint label percentages (rows: ``labels_b``, cols: ``labels_a``) and their diagonal sum."""
    if len(labels_a) != len(labels_b):
        raise InvalidInputError("label lists differ in length")
    if not labels_a:
        raise InvalidInputError("no labels")
    idx = {LR: 0, HR: 1}
    m = np.zeros((2, 2))
    for a, b in zip(labels_a, labels_b):
        m[idx[b], idx[a]] += 1
    m *= 100.0 / len(labels_a)
    return m, agreement_from_matrix(m)


def agreement_from_matrix(matrix) -> float:
    return float(np.trace(np.asarray(matrix, dtype=float)))


def eval_report(records: Sequence[EvalRecord]) -> CdpReport:
    if not records:
        raise InvalidInputError("eval_report over no records")
    conf = call_confusion(records)
    called = [r for r in records if r.pred_crops]
    matched = [region_match(r.pred_crops, r.target_crops) for r in called if r.target_crops]
    return CdpReport(
        n=len(records),
        accuracy=sum(r.correct for r in records) / len(records),
        rtr=rtr_aggregate(r.account for r in records),
        call_rate=len(called) / len(records),
        call_precision=conf["precision"],
        call_recall=conf["recall"],
        call_f1=conf["f1"],
        fpr=conf["fpr"],
        exact_match=_ratio(sum(e for e, _ in matched), len(matched)),
        relaxed_match=_ratio(sum(x for _, x in matched), len(matched)),
        avg_area=_ratio(sum(crop_set_area(r.pred_crops) for r in called), len(called)),
    )


def format_table(reports: dict[str, CdpReport]) -> str:
    """Aligned plain-text table, one row per split: Acc and RTR first, then CDP diagnostics."""
    cols = ["Acc", "RTR", "Call", "Prec", "Rec", "F1", "FPR", "IoU=1", "IoU>=.25", "Area"]

    def cell(v, pct=True):
        if v is None:
            return "-"
        return f"{100 * v:.2f}" if pct else f"{v:.3f}"

    rows = []
    for name, r in reports.items():
        rows.append([name, cell(r.accuracy), cell(r.rtr, False), cell(r.call_rate), cell(r.call_precision),
                     cell(r.call_recall), cell(r.call_f1), cell(r.fpr), cell(r.exact_match),
                     cell(r.relaxed_match), cell(r.avg_area, False)])
    header = ["split"] + cols
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = lambda row: "  ".join(str(v).rjust(w) if i else str(v).ljust(w)
                                for i, (v, w) in enumerate(zip(row, widths)))
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]
    return "\n".join(lines)
