"""Trajectory reward: answer score minus an asymmetric tool-use cost."""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .geometry import CropSet, InvalidInputError, crop_set_area

LR, HR = "LR", "HR"


class ScoringBackendError(RuntimeError):
    """The answer scorer could not produce a score; the trajectory stays unscored."""


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _norm(s: str) -> str:
    return s.strip().lower()


def anls_score(pred: str, gold: str, threshold: float = 0.5) -> float:
    p, g = _norm(pred), _norm(gold)
    if not p and not g:
        return 1.0
    s = 1.0 - levenshtein(p, g) / max(len(p), len(g))
    return s if s >= threshold else 0.0


def exact_score(pred: str, gold: str) -> float:
    return float(_norm(pred) == _norm(gold))


def token_f1(pred: str, gold: str) -> float:
    pt = re.findall(r"\w+", pred.lower())
    gt = re.findall(r"\w+", gold.lower())
    if not pt and not gt:
        return 1.0
    common = sum((Counter(pt) & Counter(gt)).values())
    if common == 0:
        return 0.0
    prec, rec = common / len(pt), common / len(gt)
    return 2 * prec * rec / (prec + rec)


def cosine(u: Iterable[float], v: Iterable[float]) -> float:
    u, v = list(u), list(v)
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(x * x for x in v))
    if nu == 0 or nv == 0:
        raise ScoringBackendError("zero-norm embedding")
    return sum(a * b for a, b in zip(u, v)) / (nu * nv)


class EmbeddingScorer:
    """Cosine similarity of two texts embedded by a remote embeddings endpoint.

    Request body ``{"input": [pred, gold]}``; response
    ``{"data": [{"embedding": [...]}, ...]}``. Negative similarities clip to 0.
    """

    def __init__(self, url: str, model: str | None = None, api_key: str | None = None,
                 timeout: float = 30.0, client=None):
        import httpx

        self.url = url
        self.model = model
        self.headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout)

    def __call__(self, pred: str, gold: str) -> float:
        body = {"input": [pred, gold]}
        if self.model:
            body["model"] = self.model
        try:
            resp = self._client.post(self.url, json=body, headers=self.headers)
            resp.raise_for_status()
            data = resp.json()["data"]
            u, v = data[0]["embedding"], data[1]["embedding"]
        except ScoringBackendError:
            raise
        except Exception as e:  # transport, HTTP status, schema
            raise ScoringBackendError(f"embedding backend failed: {e}") from e
        return min(1.0, max(0.0, cosine(u, v)))


BUILTIN_SCORERS: dict[str, Callable[[str, str], float]] = {
    "anls": anls_score,
    "exact": exact_score,
    "token_f1": token_f1,
}


@dataclass
class RewardConfig:
    alpha_miss: float = 2.0
    alpha_use: float = 0.25
    lambda_area: float = 0.01
    answer_scorer: str = "anls"
    # Optional multiplicative weights on the two reward terms.
    answer_weight: float = 1.0
    cost_weight: float = 1.0
    embedding_url: str | None = None
    embedding_model: str | None = None
    # Overrides ``answer_scorer`` when set (any ``(pred, gold) -> [0, 1]`` callable).
    custom_scorer: Callable[[str, str], float] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if min(self.alpha_miss, self.alpha_use, self.lambda_area) < 0:
            raise InvalidInputError("tool costs must be non-negative")
        if self.answer_scorer not in (*BUILTIN_SCORERS, "external-embedding"):
            raise InvalidInputError(f"unknown answer scorer {self.answer_scorer!r}")

    @classmethod
    def zero_cost(cls, **kw) -> "RewardConfig":
        return cls(alpha_miss=0.0, alpha_use=0.0, lambda_area=0.0, **kw)

    def scorer(self) -> Callable[[str, str], float]:
        if self.custom_scorer is None:
            if self.answer_scorer == "external-embedding":
                if not self.embedding_url:
                    raise ScoringBackendError("external-embedding scorer needs embedding_url")
                self.custom_scorer = EmbeddingScorer(self.embedding_url, self.embedding_model)
            else:
                self.custom_scorer = BUILTIN_SCORERS[self.answer_scorer]
        return self.custom_scorer


@dataclass(frozen=True)
class RewardBreakdown:
    r_ans: float
    c_tool: float
    area: float
    total: float


def tool_cost(crops: Iterable[str], label: str, cfg: RewardConfig | None = None) -> float:
    cfg = cfg or RewardConfig()
    if label not in (LR, HR):
        raise InvalidInputError(f"label must be LR or HR, got {label!r}")
    crops = CropSet(crops)
    if crops:
        return cfg.alpha_use + cfg.lambda_area * crop_set_area(crops)
    return cfg.alpha_miss if label == HR else 0.0


def trajectory_reward(pred: str, gold: str, crops: Iterable[str], label: str,
                      cfg: RewardConfig | None = None) -> RewardBreakdown:
    cfg = cfg or RewardConfig()
    crops = CropSet(crops)
    r_ans = float(cfg.scorer()(pred, gold))
    c_tool = tool_cost(crops, label, cfg)
    r_w, c_w = cfg.answer_weight * r_ans, cfg.cost_weight * c_tool
    return RewardBreakdown(r_ans=r_ans, c_tool=c_tool, area=crop_set_area(crops),
                           total=r_w - c_w)
