"""Tool-call protocol: prompts, first-turn parsing and training transcripts."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, asdict
from functools import lru_cache
from importlib import resources
from typing import Iterable, Union

from .geometry import CROP_IDS, CropSet, InvalidInputError
from .reward import HR, LR

TOOL_KEYWORD = "GET_CROPS"
VALID, RECOVERABLE, INCORRECT = "valid", "corrupt-recoverable", "corrupt-incorrect"

_ID_ALT = "|".join(re.escape(c) for c in CROP_IDS)
_STRICT = re.compile(
    rf"^\s*{TOOL_KEYWORD}:\s*\[\s*'(?:{_ID_ALT})'(?:\s*,\s*'(?:{_ID_ALT})')*\s*\]\s*$")
_QUOTED_ID = re.compile(r"'([^']*)'")
_LOOSE_ID = re.compile(r"\d+|\ball\b", re.IGNORECASE)


@lru_cache(maxsize=None)
def _prompt(name: str) -> str:
    return resources.files("cropcall").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def render_system_prompt() -> str:
    return _prompt("system")


def render_judge_prompt(prompt: str, gt: str, lr_resp: str, hr_resp: str) -> str:
    # str.replace, not str.format: answers may contain braces
    text = _prompt("judge")
    for key, val in (("{prompt}", prompt), ("{gt}", gt), ("{lr_resp}", lr_resp), ("{hr_resp}", hr_resp)):
        text = text.replace(key, val, 1)
    return text


def render_oracle_prompt(question: str) -> str:
    return _prompt("oracle").replace("{question}", question)


@dataclass(frozen=True)
class DirectAnswer:
    text: str


@dataclass(frozen=True)
class CropRequest:
    crops: CropSet

    def __post_init__(self):
        if not self.crops:
            raise InvalidInputError("a crop request needs at least one crop")


FirstTurnAction = Union[DirectAnswer, CropRequest]


@dataclass(frozen=True)
class ParseOutcome:
    action: FirstTurnAction
    validity: str

    @property
    def crops(self) -> CropSet:
        return self.action.crops if isinstance(self.action, CropRequest) else CropSet()


def parse_first_turn(raw: str) -> ParseOutcome:
    """Classify a first-turn output as a direct answer or a crop request.

    Text without the tool keyword is a direct answer. Exact grammar matches are
    valid requests. Anything else goes through recovery: crop ids after the
    keyword are extracted (quoted or not); any unknown id, or no id at all,
    makes the output incorrect and it falls back to a direct answer.
    """
    if TOOL_KEYWORD not in raw:
        return ParseOutcome(DirectAnswer(raw), VALID)
    if _STRICT.match(raw):
        ids = _QUOTED_ID.findall(raw)
        return ParseOutcome(CropRequest(CropSet(ids)), VALID)

    tail = raw[raw.index(TOOL_KEYWORD) + len(TOOL_KEYWORD):]
    found = [t.lower() for t in _LOOSE_ID.findall(tail)]
    if found and all(t in CROP_IDS for t in found):
        return ParseOutcome(CropRequest(CropSet(found)), RECOVERABLE)
    return ParseOutcome(DirectAnswer(raw), INCORRECT)


def emit_tool_call(crops: Iterable[str]) -> str:
    crops = CropSet(crops)
    if not crops:
        raise InvalidInputError("cannot emit a tool call for an empty crop set")
    return f"{TOOL_KEYWORD}: [" + ", ".join(f"'{c}'" for c in crops) + "]"


@dataclass(frozen=True)
class Sample:
    sample_id: str
    image: str
    question: str
    answer: str
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if not str(self.question).strip() or not str(self.answer).strip():
            raise InvalidInputError(f"sample {self.sample_id}: empty question or answer")

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        try:
            return cls(str(d["sample_id"]), str(d["image"]), str(d["question"]), str(d["answer"]),
                       d.get("width"), d.get("height"))
        except KeyError as e:
            raise InvalidInputError(f"dataset row missing field {e}") from e


@dataclass
class Turn:
    role: str
    text: str = ""
    images: list[str] = field(default_factory=list)
    loss_weight: float = 1.0


@dataclass
class Transcript:
    sample_id: str
    label: str
    turns: list[Turn]
    target_crops: CropSet = field(default_factory=CropSet)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "label": self.label,
            "turns": [asdict(t) for t in self.turns],
            "target_crops": list(self.target_crops),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "Transcript":
        return cls(d["sample_id"], d["label"], [Turn(**t) for t in d["turns"]],
                   CropSet(d.get("target_crops", ())))


def low_res_ref(image: str) -> str:
    return f"{image}#low"


def crop_ref(image: str, crop_id: str) -> str:
    return f"{image}#crop={crop_id}"


def build_transcript(sample: Sample, label: str, target_crops: Iterable[str] = (),
                     answer: str | None = None, w_tool: float = 5.0) -> Transcript:
    """LR: system, user, answer. HR: system, user, tool call, tool result, answer.

    Only assistant turns carry loss; the tool-call turn is weighted ``w_tool``.
    """
    if label not in (LR, HR):
        raise InvalidInputError(f"label must be LR or HR, got {label!r}")
    target = CropSet(target_crops)
    if label == HR and not target:
        raise InvalidInputError("HR transcript needs a non-empty crop target")
    if label == LR:
        target = CropSet()
    answer = sample.answer if answer is None else answer
    turns = [
        Turn("system", render_system_prompt(), [], 0.0),
        Turn("user", sample.question, [low_res_ref(sample.image)], 0.0),
    ]
    if label == HR:
        turns += [
            Turn("assistant", emit_tool_call(target), [], float(w_tool)),
            Turn("tool", "", [crop_ref(sample.image, c) for c in target], 0.0),
        ]
    turns.append(Turn("assistant", answer, [], 1.0))
    return Transcript(sample.sample_id, label, turns, target)
