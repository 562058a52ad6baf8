"""Crop vocabulary, rectangle arithmetic and bbox -> crop-set mapping.

All rectangles live in normalized image coordinates ``[0, 1]`` with the
origin at the top-left corner.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np


class InvalidInputError(ValueError):
    """Raised for degenerate or malformed geometric / numeric input."""


class Rect(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def contains(self, other: "Rect") -> bool:
        return (self.x1 <= other.x1 and self.y1 <= other.y1
                and self.x2 >= other.x2 and self.y2 >= other.y2)

    def contains_point_strict(self, x: float, y: float) -> bool:
        return self.x1 < x < self.x2 and self.y1 < y < self.y2


def make_rect(coords: Iterable[float]) -> Rect:
    """Build a validated :class:`Rect` from four numbers."""
    vals = [float(v) for v in coords]
    if len(vals) != 4:
        raise InvalidInputError(f"rect needs 4 coordinates, got {len(vals)}")
    r = Rect(*vals)
    validate_rect(r)
    return r


def validate_rect(r: Rect) -> None:
    if not all(np.isfinite(v) for v in r):
        raise InvalidInputError(f"non-finite rect {tuple(r)}")
    if min(r) < 0.0 or max(r) > 1.0:
        raise InvalidInputError(f"rect {tuple(r)} outside [0, 1]")
    if not (r.x1 < r.x2 and r.y1 < r.y2):
        raise InvalidInputError(f"degenerate rect {tuple(r)}")


# Crop vocabulary, in the canonical order used for serialization.
CROP_IDS: tuple[str, ...] = ("0", "1", "2", "3", "4", "5", "6", "7", "8", "all")

CROP_NAMES: dict[str, str] = {
    "0": "top-left", "1": "top-right", "2": "bottom-left", "3": "bottom-right",
    "4": "center", "5": "top", "6": "bottom", "7": "left", "8": "right",
    "all": "all",
}

CROP_RECTS: dict[str, Rect] = {
    "0": Rect(0.0, 0.0, 0.5, 0.5),
    "1": Rect(0.5, 0.0, 1.0, 0.5),
    "2": Rect(0.0, 0.5, 0.5, 1.0),
    "3": Rect(0.5, 0.5, 1.0, 1.0),
    # middle 50% x 50%, same area as a quadrant
    "4": Rect(0.25, 0.25, 0.75, 0.75),
    "5": Rect(0.0, 0.0, 1.0, 0.5),
    "6": Rect(0.0, 0.5, 1.0, 1.0),
    "7": Rect(0.0, 0.0, 0.5, 1.0),
    "8": Rect(0.5, 0.0, 1.0, 1.0),
    "all": Rect(0.0, 0.0, 1.0, 1.0),
}

_ORDER = {cid: i for i, cid in enumerate(CROP_IDS)}


@dataclass(frozen=True)
class CropCandidate:
    id: str
    rect: Rect

    @property
    def name(self) -> str:
        return CROP_NAMES[self.id]


@dataclass(frozen=True)
class MappingConfig:
    tau: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.tau <= 1.0):
            raise InvalidInputError(f"tau must be in (0, 1], got {self.tau}")


class CropSet(tuple):
    """Deduplicated crop ids in canonical order (``"0"``..``"8"``, then ``"all"``).

    The empty set encodes the no-call action.
    """

    def __new__(cls, ids: Iterable[str | int] = ()):
        norm = set()
        for cid in ids:
            cid = str(cid)
            if cid not in _ORDER:
                raise InvalidInputError(f"unknown crop id {cid!r}")
            norm.add(cid)
        return super().__new__(cls, sorted(norm, key=_ORDER.__getitem__))

    @property
    def rects(self) -> list[Rect]:
        return [CROP_RECTS[c] for c in self]

    def __repr__(self) -> str:
        return f"CropSet({list(self)!r})"


def candidate_crops() -> list[CropCandidate]:
    return [CropCandidate(cid, CROP_RECTS[cid]) for cid in CROP_IDS]


def rect_iou(a: Rect, b: Rect) -> float:
    validate_rect(a)
    validate_rect(b)
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def threshold_candidates(b: Rect, tau: float = 0.5) -> dict[str, float]:
    """Literal threshold selection: ``{crop id: IoU}`` for every candidate with IoU(b, c) >= tau."""
    validate_rect(b)
    ious = {cid: rect_iou(b, CROP_RECTS[cid]) for cid in CROP_IDS}
    return {cid: v for cid, v in ious.items() if v >= tau}


def _union_contains(rects: list[Rect], target: Rect) -> bool:
    # Coverage on the grid induced by all edges: each elementary cell inside
    # target must lie inside some rect.
    xs = sorted({v for r in [target, *rects] for v in (r.x1, r.x2)
                 if target.x1 <= v <= target.x2})
    ys = sorted({v for r in [target, *rects] for v in (r.y1, r.y2)
                 if target.y1 <= v <= target.y2})
    for xa, xb in zip(xs, xs[1:]):
        for ya, yb in zip(ys, ys[1:]):
            if xb <= xa or yb <= ya:
                continue
            cx, cy = (xa + xb) / 2.0, (ya + yb) / 2.0
            if not any(r.x1 <= cx <= r.x2 and r.y1 <= cy <= r.y2 for r in rects):
                return False
    return True


def map_bbox_to_crops(b: Rect, cfg: MappingConfig | None = None) -> CropSet:
    """Map an evidence box to the crop subset used as supervision target.

    Threshold selection at IoU >= tau, then containment pruning (of two nested
    selected crops keep the higher-IoU one, the smaller on ties), then
    coverage repair: when nothing survives or the survivors do not cover
    ``b``, fall back to the smallest single crop containing ``b``.
    """
    cfg = cfg or MappingConfig()
    ious = threshold_candidates(b, cfg.tau)
    selected = list(ious)

    dropped = set()
    for i, c in enumerate(selected):
        for d in selected[i + 1:]:
            rc, rd = CROP_RECTS[c], CROP_RECTS[d]
            if rc.contains(rd) or rd.contains(rc):
                small, large = (c, d) if rc.area <= rd.area else (d, c)
                if ious[small] >= ious[large]:
                    dropped.add(large)
                else:
                    dropped.add(small)
    kept = [c for c in selected if c not in dropped]

    if not kept or not _union_contains([CROP_RECTS[c] for c in kept], b):
        containers = [c for c in CROP_IDS if CROP_RECTS[c].contains(b)]
        best = min(containers, key=lambda c: (CROP_RECTS[c].area, _ORDER[c]))
        return CropSet([best])
    return CropSet(kept)


def union_area(rects: list[Rect]) -> float:
    """Exact area of a union of axis-aligned rectangles (coordinate compression)."""
    if not rects:
        return 0.0
    xs = sorted({v for r in rects for v in (r.x1, r.x2)})
    ys = sorted({v for r in rects for v in (r.y1, r.y2)})
    total = 0.0
    for xa, xb in zip(xs, xs[1:]):
        for ya, yb in zip(ys, ys[1:]):
            cx, cy = (xa + xb) / 2.0, (ya + yb) / 2.0
            if any(r.x1 <= cx <= r.x2 and r.y1 <= cy <= r.y2 for r in rects):
                total += (xb - xa) * (yb - ya)
    return total


def crop_set_area(crops: Iterable[str]) -> float:
    """Fraction of the image covered by the union of the selected crops."""
    return union_area(CropSet(crops).rects)


def hull(rects: Iterable[Rect]) -> Rect:
    rects = list(rects)
    if not rects:
        raise InvalidInputError("hull of an empty box list")
    return Rect(min(r.x1 for r in rects), min(r.y1 for r in rects),
                max(r.x2 for r in rects), max(r.y2 for r in rects))
