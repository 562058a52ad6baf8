"""Synthetic "needle" environment for the first-turn crop decision.

Coarse episodes are answerable from the low-resolution view. Fine-grained
episodes hide the answer in one of the nine non-``all`` regions and are only
reliably answered when a requested crop covers that region. The policy sees a
noisy one-hot hint of the region, a fine-grained flag and a bias feature.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import CROP_IDS, CROP_RECTS, CropSet, InvalidInputError, crop_set_area
from .grpo import ACTIONS, NO_CALL, action_crops
from .reward import HR, LR, RewardConfig, tool_cost
from .tokens import ImageDims, TokenModel, trajectory_account

REGIONS: tuple[str, ...] = CROP_IDS[:9]
FEATURE_NAMES: list[str] = [f"hint_{r}" for r in REGIONS] + ["fine", "bias"]
N_FEATURES = len(FEATURE_NAMES)
WRONG_ANSWER = "unknown"


@dataclass(frozen=True)
class EnvConfig:
    p_easy: float = 0.95
    p_lr_fine: float = 0.2
    p_hr: float = 0.95
    eta: float = 0.1
    fraction_fine: float = 0.2
    width: int = 1120
    height: int = 1120
    token_stride: int = 28
    seed: int = 0

    def __post_init__(self):
        for name in ("p_easy", "p_lr_fine", "p_hr", "eta", "fraction_fine"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InvalidInputError(f"{name} must be a probability, got {v}")

    @property
    def dims(self) -> ImageDims:
        return ImageDims(self.width, self.height)

    @property
    def token_model(self) -> TokenModel:
        return TokenModel(self.token_stride)


@dataclass(frozen=True)
class Episode:
    fine_grained: bool
    evidence_crop: str | None
    hint: str | None
    gold: str
    features: tuple[float, ...]
    dims: ImageDims

    @property
    def label(self) -> str:
        return HR if (self.fine_grained and self.evidence_crop is not None) else LR


def encode_features(fine: bool, hint: str | None) -> tuple[float, ...]:
    x = [0.0] * N_FEATURES
    if hint is not None:
        x[REGIONS.index(hint)] = 1.0
    x[-2] = 1.0 if fine else 0.0
    x[-1] = 1.0
    return tuple(x)


def gen_episode(cfg: EnvConfig, rng: np.random.Generator) -> Episode:
    fine = bool(rng.random() < cfg.fraction_fine)
    evidence = hint = None
    if fine:
        evidence = REGIONS[rng.integers(len(REGIONS))]
        hint = evidence
        if rng.random() < cfg.eta:
            others = [r for r in REGIONS if r != evidence]
            hint = others[rng.integers(len(others))]
    gold = str(int(rng.integers(1000, 10000)))
    return Episode(fine, evidence, hint, gold, encode_features(fine, hint), cfg.dims)


def covers(crops, evidence: str | None) -> bool:
    """A crop set covers the evidence when some requested rect strictly contains its center."""
    if evidence is None:
        return False
    cx, cy = CROP_RECTS[evidence].center
    return any(CROP_RECTS[c].contains_point_strict(cx, cy) for c in CropSet(crops))


def correct_prob(ep_fine: bool, evidence: str | None, crops, cfg: EnvConfig) -> float:
    if not ep_fine:
        return cfg.p_easy
    return cfg.p_hr if covers(crops, evidence) else cfg.p_lr_fine


def env_answer(ep: Episode, crops, cfg: EnvConfig, rng: np.random.Generator):
    """Play the answering turn: returns ``(correct, TokenAccount)``."""
    crops = CropSet(crops)
    correct = bool(rng.random() < correct_prob(ep.fine_grained, ep.evidence_crop, crops, cfg))
    return correct, trajectory_account(ep.dims, crops, cfg.token_model)


class SimEnv:
    """Adapter exposing the rollout contract used by :func:`cropcall.grpo.train_grpo`."""

    def __init__(self, cfg: EnvConfig | None = None):
        self.cfg = cfg or EnvConfig()

    def sample_episode(self, rng):
        return gen_episode(self.cfg, rng)

    def features(self, ep: Episode) -> np.ndarray:
        return np.asarray(ep.features)

    def label(self, ep: Episode) -> str:
        return ep.label

    def gold(self, ep: Episode) -> str:
        return ep.gold

    def rollout(self, ep: Episode, crops, rng):
        correct, acct = env_answer(ep, crops, self.cfg, rng)
        return (ep.gold if correct else WRONG_ANSWER), acct


def oracle_action(fine: bool, hint: str | None) -> int:
    """Call the hinted crop iff the episode is fine-grained."""
    if not fine or hint is None:
        return NO_CALL
    return ACTIONS.index(hint)


def _contexts(cfg: EnvConfig):
    """Enumerate (probability, fine, evidence, hint) over the episode distribution."""
    f, eta, n = cfg.fraction_fine, cfg.eta, len(REGIONS)
    if f < 1.0:
        yield 1.0 - f, False, None, None
    if f > 0.0:
        for ev in REGIONS:
            yield f / n * (1.0 - eta), True, ev, ev
            if eta > 0:
                for h in REGIONS:
                    if h != ev:
                        yield f / n * eta / (n - 1), True, ev, h


def policy_value(cfg: EnvConfig, reward_cfg: RewardConfig | None = None,
                 probs_fn: Callable[[np.ndarray], np.ndarray] | None = None) -> dict:
    """Exact expected reward, accuracy, RTR and call rate of a policy by enumeration.

    ``probs_fn`` maps a feature vector to a distribution over the 11 actions;
    the default is the oracle rule. Wrong answers score 0 and right answers 1
    under every built-in scorer, which the expectation relies on.
    """
    reward_cfg = reward_cfg or RewardConfig()
    full = cfg.dims
    act_rtr = [trajectory_account(full, action_crops(a), cfg.token_model).rtr
               for a in range(len(ACTIONS))]
    out = dict(reward=0.0, accuracy=0.0, rtr=0.0, call_rate=0.0, mean_area_when_called=0.0)
    area_mass = 0.0
    for w, fine, ev, hint in _contexts(cfg):
        x = np.asarray(encode_features(fine, hint))
        if probs_fn is None:
            probs = np.zeros(len(ACTIONS))
            probs[oracle_action(fine, hint)] = 1.0
        else:
            probs = np.asarray(probs_fn(x))
        label = HR if fine else LR
        for a, pa in enumerate(probs):
            if pa == 0.0:
                continue
            crops = action_crops(a)
            pc = correct_prob(fine, ev, crops, cfg)
            m = w * pa
            out["accuracy"] += m * pc
            out["reward"] += m * (reward_cfg.answer_weight * pc
                                  - reward_cfg.cost_weight * tool_cost(crops, label, reward_cfg))
            out["rtr"] += m * act_rtr[a]
            if a != NO_CALL:
                out["call_rate"] += m
                out["mean_area_when_called"] += m * crop_set_area(crops)
                area_mass += m
    if area_mass:
        out["mean_area_when_called"] /= area_mass
    return out


def optimal_policy_value(cfg: EnvConfig, reward_cfg: RewardConfig | None = None) -> dict:
    return policy_value(cfg, reward_cfg)


def oracle_sft_dataset(cfg: EnvConfig, n: int, rng: np.random.Generator):
    """Behaviour-cloning rows: HR episodes are labelled with their true evidence crop."""
    rows = []
    for _ in range(n):
        ep = gen_episode(cfg, rng)
        a = NO_CALL if ep.label == LR else ACTIONS.index(ep.evidence_crop)
        rows.append((np.asarray(ep.features), a))
    return rows


def export_samples(episodes, prefix: str = "sim") -> list[dict]:
    """Episodes as rows of the curation input schema, with the hidden state kept aside."""
    rows = []
    for i, ep in enumerate(episodes):
        rows.append({
            "sample_id": f"{prefix}-{i:06d}",
            "image": f"{prefix}://{i:06d}.png",
            "question": "What is the value shown in the marked field?",
            "answer": ep.gold,
            "width": ep.dims.width,
            "height": ep.dims.height,
            "sim": {
                "fine_grained": ep.fine_grained,
                "evidence_crop": ep.evidence_crop,
                "hint": ep.hint,
                "features": list(ep.features),
            },
        })
    return rows


def never_call(x, rng) -> int:
    return NO_CALL


def always_all(x, rng) -> int:
    return ACTIONS.index("all") if x[-2] else NO_CALL


def oracle_chooser(x, rng) -> int:
    hint = next((REGIONS[i] for i in range(len(REGIONS)) if x[i] > 0), None)
    return oracle_action(bool(x[-2]), hint)


def policy_chooser(policy, greedy: bool = False):
    def choose(x, rng):
        return policy.greedy(x) if greedy else int(policy.sample(x, rng))
    return choose


def rollout_records(cfg: EnvConfig, choose, n: int, seed: int = 0):
    """Roll a first-turn chooser over ``n`` fresh episodes; returns EvalRecords."""
    from .metrics import EvalRecord

    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        ep = gen_episode(cfg, rng)
        a = choose(np.asarray(ep.features), rng)
        crops = action_crops(a)
        correct, acct = env_answer(ep, crops, cfg, rng)
        target = CropSet([ep.evidence_crop]) if ep.label == HR else CropSet()
        records.append(EvalRecord(f"ep-{i:06d}", ep.label, crops, target, correct, acct))
    return records


def _sample_rng(seed: int, sample_id: str, salt: str) -> np.random.Generator:
    import hashlib

    h = hashlib.sha256(f"{seed}:{sample_id}:{salt}".encode()).digest()
    return np.random.default_rng(int.from_bytes(h[:8], "little"))


def scripted_clients(rows: list[dict], cfg: EnvConfig | None = None, seed: int = 0,
                     malformed_oracle: float = 0.0, models=("vlm", "judge", "oracle")):
    """Model backends that answer simulator samples by the environment's rules.

    The VLM is right with the environment's probabilities (low-res view vs a full
    view that always covers the evidence), the judge compares both answers to
    the gold one, and the oracle returns the evidence region's box on the
    0..1000 grid. ``malformed_oracle`` is the fraction of samples whose oracle
    reply is garbage. Every reply is a deterministic function of the request.
    """
    from .clients import ScriptedChatClient

    cfg = cfg or EnvConfig()
    by_image = {r["image"]: r for r in rows}

    def image_and_text(messages):
        parts = messages[-1]["content"]
        img = next((p for p in parts if p["type"] == "image"), None)
        txt = "".join(p["text"] for p in parts if p["type"] == "text")
        return img, txt

    def vlm(messages):
        img, _ = image_and_text(messages)
        row = by_image[img["image"]]
        sim = row["sim"]
        if img["resolution"] == "low":
            p = cfg.p_lr_fine if sim["fine_grained"] else cfg.p_easy
        else:
            p = cfg.p_hr if sim["fine_grained"] else cfg.p_easy
        rng = _sample_rng(seed, row["sample_id"], "vlm-" + img["resolution"])
        return row["answer"] if rng.random() < p else WRONG_ANSWER

    def judge(messages):
        import re

        _, txt = image_and_text(messages)
        m = re.search(r"Ground Truth Answer: (.*)\n\nResponse 1:\n(.*)\n\nResponse 2:\n(.*)\n\n", txt)
        gt, r1, r2 = m.groups()
        ok1, ok2 = r1.strip() == gt.strip(), r2.strip() == gt.strip()
        return "2" if ok2 and not ok1 else "1" if ok1 and not ok2 else "0"

    def oracle(messages):
        img, _ = image_and_text(messages)
        row = by_image[img["image"]]
        rng = _sample_rng(seed, row["sample_id"], "oracle")
        if rng.random() < malformed_oracle:
            return "I think the answer is in the upper part of the image."
        ev = row["sim"]["evidence_crop"]
        if ev is None:
            x1, y1 = rng.uniform(0, 0.8, size=2)
            r = (x1, y1, x1 + 0.2, y1 + 0.2)
        else:
            r = CROP_RECTS[ev]
        # tight box well inside the region
        w, h = r[2] - r[0], r[3] - r[1]
        box = [round(1000 * v) for v in (r[0] + 0.2 * w, r[1] + 0.2 * h, r[2] - 0.2 * w, r[3] - 0.2 * h)]
        return "{'question': [%s], 'answer': [%s]}" % (box, box)

    v, j, o = models
    return ScriptedChatClient(v, vlm), ScriptedChatClient(j, judge), ScriptedChatClient(o, oracle)
