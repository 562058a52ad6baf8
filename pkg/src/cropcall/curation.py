"""Three-stage automatic supervision: sufficiency labels, grounding, transcripts."""
from __future__ import annotations

import ast
import json
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .clients import ClientError, image_part, text_part
from .geometry import CropSet, InvalidInputError, MappingConfig, Rect, hull, map_bbox_to_crops, validate_rect
from .protocol import Sample, Transcript, build_transcript, render_judge_prompt, render_oracle_prompt
from .reward import HR, LR, anls_score

VERDICT_LABELS = {0: LR, 1: LR, 2: HR}


class VerdictParseError(ValueError):
    pass


class GroundingParseError(ValueError):
    pass


@dataclass(frozen=True)
class Verdict:
    value: int
    raw: str

    @property
    def label(self) -> str:
        return VERDICT_LABELS[self.value]


@dataclass(frozen=True)
class GroundingResult:
    question_boxes: list[Rect]
    answer_boxes: list[Rect]
    raw: str


@dataclass
class CurationConfig:
    vlm_model: str = "vlm"
    judge_model: str = "judge"
    oracle_model: str = "oracle"
    concurrency: int = 4
    tau: float = 0.5
    w_tool: float = 5.0
    labeler: str = "judge"  # or "anls"
    anls_threshold: float = 0.5
    include_question_boxes: bool = False

    def __post_init__(self):
        if self.labeler not in ("judge", "anls"):
            raise InvalidInputError(f"labeler must be 'judge' or 'anls', got {self.labeler!r}")
        if self.concurrency < 1:
            raise InvalidInputError("concurrency must be >= 1")


@dataclass
class Clients:
    vlm: object
    judge: object | None = None
    oracle: object | None = None


@dataclass
class CurationRecord:
    sample_id: str
    label: str
    target_crops: CropSet
    transcript: Transcript
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = self.transcript.to_dict()
        d["provenance"] = self.provenance
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


@dataclass
class Failure:
    sample_id: str
    stage: str
    error: str


def parse_verdict(raw: str) -> Verdict:
    """Strict single digit first, else the first 0/1/2 digit anywhere in the reply."""
    s = raw.strip()
    if s in ("0", "1", "2"):
        return Verdict(int(s), raw)
    m = re.search(r"[012]", s)
    if m is None:
        raise VerdictParseError(f"no verdict digit in judge reply {raw!r}")
    return Verdict(int(m.group()), raw)


def ask_vlm(sample: Sample, client, resolution: str) -> str:
    messages = [{"role": "user", "content": [image_part(sample.image, resolution),
                                             text_part(sample.question)]}]
    return client.complete(messages)


def stage1_label(sample: Sample, vlm_client, judge_client):
    """Answer at low and full resolution, let the judge compare, map the verdict to a label.

    Returns ``(verdict, label, low_answer, full_answer)``.
    """
    a_low = ask_vlm(sample, vlm_client, "low")
    a_full = ask_vlm(sample, vlm_client, "full")
    prompt = render_judge_prompt(sample.question, sample.answer, a_low, a_full)
    raw = judge_client.complete([{"role": "user", "content": [text_part(prompt)]}])
    verdict = parse_verdict(raw)
    return verdict, verdict.label, a_low, a_full


def stage1_label_anls(sample: Sample, vlm_client, threshold: float = 0.5):
    """Alternative labeller: LR iff the low-res answer's ANLS reaches ``threshold``."""
    a_low = ask_vlm(sample, vlm_client, "low")
    score = anls_score(a_low, sample.answer)
    return (LR if score >= threshold else HR), a_low, score


def _boxes(raw_list, key: str) -> list[Rect]:
    if not isinstance(raw_list, (list, tuple)):
        raise GroundingParseError(f"{key!r} must be a list of boxes")
    if len(raw_list) == 4 and all(isinstance(v, (int, float)) for v in raw_list):
        raw_list = [raw_list]
    out = []
    for box in raw_list:
        if not (isinstance(box, (list, tuple)) and len(box) == 4):
            raise GroundingParseError(f"malformed box {box!r}")
        r = Rect(*(min(1.0, max(0.0, float(v) / 1000.0)) for v in box))
        try:
            validate_rect(r)
        except InvalidInputError:
            continue  # collapsed after clamping
        out.append(r)
    return out


def parse_grounding(raw: str) -> GroundingResult:
    start, end = raw.find("{"), raw.rfind("}")
    if start < 0 or end < start:
        raise GroundingParseError(f"no dictionary in oracle reply {raw[:80]!r}")
    try:
        doc = ast.literal_eval(raw[start:end + 1])
    except (ValueError, SyntaxError) as e:
        raise GroundingParseError(f"unparseable oracle reply: {e}") from e
    if not isinstance(doc, dict) or "answer" not in doc:
        raise GroundingParseError("oracle reply lacks an 'answer' entry")
    answers = _boxes(doc["answer"], "answer")
    questions = _boxes(doc.get("question", []), "question")
    if not answers:
        raise GroundingParseError("oracle reply has no valid answer box")
    return GroundingResult(questions, answers, raw)


def stage2_ground(sample: Sample, oracle_client, include_question_boxes: bool = False):
    """Localize the evidence; returns ``(grounding, evidence_rect)``."""
    messages = [{"role": "user", "content": [image_part(sample.image, "full"),
                                             text_part(render_oracle_prompt(sample.question))]}]
    g = parse_grounding(oracle_client.complete(messages))
    boxes = g.answer_boxes + (g.question_boxes if include_question_boxes else [])
    return g, hull(boxes)


def stage3_emit(sample: Sample, label: str, evidence: Rect | None = None,
                mapping_cfg: MappingConfig | None = None, w_tool: float = 5.0,
                provenance: dict | None = None) -> CurationRecord:
    if label == HR:
        if evidence is None:
            raise InvalidInputError("HR sample needs an evidence box")
        target = map_bbox_to_crops(evidence, mapping_cfg)
    else:
        target = CropSet()
    transcript = build_transcript(sample, label, target, sample.answer, w_tool)
    return CurationRecord(sample.sample_id, label, target, transcript, dict(provenance or {}))


def curate_sample(sample: Sample, clients: Clients, cfg: CurationConfig) -> CurationRecord | Failure:
    prov: dict = {"models": {"vlm": cfg.vlm_model}}
    stage = "stage1"
    try:
        if cfg.labeler == "anls":
            label, a_low, score = stage1_label_anls(sample, clients.vlm, cfg.anls_threshold)
            prov.update(labeler="anls", low_answer=a_low, anls=score)
        else:
            verdict, label, a_low, a_full = stage1_label(sample, clients.vlm, clients.judge)
            prov["models"]["judge"] = cfg.judge_model
            prov.update(labeler="judge", low_answer=a_low, full_answer=a_full,
                        verdict=verdict.value, judge_raw=verdict.raw)
        evidence = None
        if label == HR:
            stage = "stage2"
            g, evidence = stage2_ground(sample, clients.oracle, cfg.include_question_boxes)
            prov["models"]["oracle"] = cfg.oracle_model
            prov.update(question_boxes=[list(r) for r in g.question_boxes],
                        answer_boxes=[list(r) for r in g.answer_boxes],
                        evidence=list(evidence))
        stage = "stage3"
        return stage3_emit(sample, label, evidence, MappingConfig(cfg.tau), cfg.w_tool, prov)
    except (ClientError, VerdictParseError, GroundingParseError, InvalidInputError) as e:
        return Failure(sample.sample_id, stage, f"{type(e).__name__}: {e}")


def run_pipeline(samples: Iterable[Sample], clients: Clients,
                 cfg: CurationConfig | None = None) -> Iterator[CurationRecord | Failure]:
    """Curate samples concurrently; results come back in input order."""
    cfg = cfg or CurationConfig()
    samples = list(samples)
    with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
        yield from pool.map(lambda s: curate_sample(s, clients, cfg), samples)


def crop_key(crops: CropSet) -> str:
    return ",".join(crops) if crops else "LR"


def summarize(results: list) -> dict:
    records = [r for r in results if isinstance(r, CurationRecord)]
    failures = [r for r in results if isinstance(r, Failure)]
    labels = Counter(r.label for r in records)
    crops = Counter(crop_key(r.target_crops) for r in records)
    return {
        "n_input": len(results),
        "n_records": len(records),
        "labels": {LR: labels.get(LR, 0), HR: labels.get(HR, 0)},
        "crop_distribution": dict(sorted(crops.items())),
        "failures": {
            "total": len(failures),
            "by_stage": dict(sorted(Counter(f.stage for f in failures).items())),
            "samples": [{"sample_id": f.sample_id, "stage": f.stage, "error": f.error} for f in failures],
        },
    }


def write_records(results: Iterable, fh) -> list:
    """Write successful records as JSONL to ``fh``; returns every result."""
    out = []
    for r in results:
        if isinstance(r, CurationRecord):
            fh.write(r.to_json() + "\n")
        out.append(r)
    return out


def read_samples(path) -> list[Sample]:
    with open(path, encoding="utf-8") as fh:
        return [Sample.from_dict(json.loads(line)) for line in fh if line.strip()]
