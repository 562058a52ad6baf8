"""Group-relative policy optimization for the first-turn crop decision.

The toy policy is a linear softmax over 11 actions: no-call, or one of the
10 crop candidates requested as a singleton. Each rollout has exactly one
policy action (the first-turn decision); the answering turn is played by the
environment, so per-token ratios reduce to a single per-trajectory ratio.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import CROP_IDS, CropSet, InvalidInputError
from .reward import RewardConfig, trajectory_reward

ACTIONS: tuple[str | None, ...] = (None,) + CROP_IDS
NO_CALL = 0
POLICY_FORMAT = "cropcall.policy"
POLICY_VERSION = 1


def action_crops(a: int) -> CropSet:
    return CropSet() if a == NO_CALL else CropSet([ACTIONS[a]])


def action_index(crops) -> int:
    crops = CropSet(crops)
    if not crops:
        return NO_CALL
    if len(crops) != 1:
        raise InvalidInputError(f"toy policy only has singleton crop actions, got {list(crops)}")
    return ACTIONS.index(crops[0])


@dataclass
class GrpoConfig:
    group_size: int = 8
    eps_adv: float = 1e-4
    eps_clip: float = 0.2
    beta: float = 0.05
    learning_rate: float = 0.5
    steps: int = 1500
    prompts_per_step: int = 8
    updates_per_batch: int = 2
    max_grad_norm: float = 1.0

    def __post_init__(self):
        if self.group_size < 2:
            raise InvalidInputError("group_size must be >= 2")
        if not (0.0 < self.eps_clip < 1.0):
            raise InvalidInputError("eps_clip must be in (0, 1)")
        if self.beta < 0:
            raise InvalidInputError("beta must be >= 0")


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Policy:
    weights: np.ndarray  # (n_features, n_actions)
    feature_names: list[str] = field(default_factory=list)
    actions: tuple = ACTIONS

    @classmethod
    def zeros(cls, n_features: int, feature_names: Sequence[str] = (), n_actions: int = len(ACTIONS)):
        return cls(np.zeros((n_features, n_actions)), list(feature_names),
                   ACTIONS if n_actions == len(ACTIONS) else tuple(range(n_actions)))

    def copy(self) -> "Policy":
        return Policy(self.weights.copy(), list(self.feature_names), self.actions)

    def probs(self, x: np.ndarray) -> np.ndarray:
        return softmax(np.asarray(x, dtype=float) @ self.weights)

    def sample(self, x: np.ndarray, rng: np.random.Generator, size: int | None = None):
        p = self.probs(x)
        return rng.choice(len(p), size=size, p=p)

    def greedy(self, x: np.ndarray) -> int:
        return int(np.argmax(self.probs(x)))

    def to_json(self) -> str:
        doc = {
            "format": POLICY_FORMAT,
            "version": POLICY_VERSION,
            "feature_schema": list(self.feature_names),
            "actions": ["none" if a is None else str(a) for a in self.actions],
            "weights": self.weights.tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "Policy":
        try:
            doc = json.loads(text)
            if doc.get("format") != POLICY_FORMAT or doc.get("version") != POLICY_VERSION:
                raise ValueError(f"unsupported policy format {doc.get('format')!r} v{doc.get('version')}")
            actions = tuple(None if a == "none" else a for a in doc["actions"])
            if actions != ACTIONS:
                raise ValueError("action vocabulary mismatch")
            w = np.asarray(doc["weights"], dtype=float)
            names = list(doc["feature_schema"])
            if w.shape != (len(names), len(ACTIONS)):
                raise ValueError(f"weights shape {w.shape} does not match schema")
        except (KeyError, TypeError, ValueError) as e:
            raise PolicyLoadError(str(e)) from e
        return cls(w, names, actions)


class PolicyLoadError(ValueError):
    pass


def group_advantages(rewards: Sequence[float], eps_adv: float = 1e-4) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or len(r) < 2:
        raise InvalidInputError("group_advantages needs at least two rewards")
    sigma = r.std()  # population std
    if sigma == 0.0:
        return np.zeros_like(r)
    return (r - r.mean()) / (sigma + eps_adv)


def kl_categorical(p, q) -> float:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InvalidInputError(f"support mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise InvalidInputError("q must be positive wherever p is")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def clipped_term(ratio: float, advantage: float, eps_clip: float = 0.2) -> float:
    return min(ratio * advantage, float(np.clip(ratio, 1 - eps_clip, 1 + eps_clip)) * advantage)


@dataclass
class GroupBatch:
    features: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    advantages: np.ndarray
    old_probs: np.ndarray
    ref_probs: np.ndarray

    @property
    def mu(self) -> float:
        return float(np.mean(self.rewards))

    @property
    def sigma(self) -> float:
        return float(np.std(self.rewards))


def make_batch(features, actions, rewards, old_probs, ref_probs, eps_adv=1e-4) -> GroupBatch:
    return GroupBatch(np.asarray(features, dtype=float), np.asarray(actions, dtype=int),
                      np.asarray(rewards, dtype=float), group_advantages(rewards, eps_adv),
                      np.asarray(old_probs, dtype=float), np.asarray(ref_probs, dtype=float))


def grpo_loss(batch: GroupBatch, policy: Policy, cfg: GrpoConfig) -> tuple[float, np.ndarray]:
    """Negative GRPO objective for one group and its gradient w.r.t. the weights."""
    x = batch.features
    p = policy.probs(x)
    old = batch.old_probs[batch.actions]
    if np.any(old <= 0):
        raise InvalidInputError("zero old probability for a taken action")
    G = len(batch.actions)
    ratio = p[batch.actions] / old
    adv = batch.advantages
    lo, hi = 1 - cfg.eps_clip, 1 + cfg.eps_clip
    unclipped = ratio * adv
    clipped = np.clip(ratio, lo, hi) * adv
    surrogate = np.minimum(unclipped, clipped)
    # gradient flows only where the unclipped branch is the active minimum
    active = unclipped <= clipped

    dz = np.zeros_like(p)
    for a, r, A, on in zip(batch.actions, ratio, adv, active):
        if on:
            g = -p.copy()
            g[a] += 1.0
            dz += A * r * g
    dz /= G

    kl = kl_categorical(p, batch.ref_probs)
    logp = np.log(np.maximum(p, 1e-300))
    dkl = p * (logp - np.log(batch.ref_probs) - kl)

    objective = surrogate.mean() - cfg.beta * kl
    grad_obj = np.outer(x, dz - cfg.beta * dkl)
    return -float(objective), -grad_obj


def sft_init_policy(dataset, n_features: int | None = None, lr: float = 1.0, steps: int = 2000,
                    call_weight: float = 1.0, l2: float = 0.0,
                    feature_names: Sequence[str] = ()) -> Policy:
    """Behaviour-cloning cold start by full-batch gradient descent on weighted CE.

    ``dataset`` holds ``(features, action)`` or ``(features, action, weight)``
    rows. Rows whose action is a crop request are further multiplied by
    ``call_weight`` (the tool-call turn weight).
    """
    rows = list(dataset)
    if not rows:
        raise InvalidInputError("empty SFT dataset")
    X = np.asarray([r[0] for r in rows], dtype=float)
    y = np.asarray([r[1] for r in rows], dtype=int)
    w = np.asarray([r[2] if len(r) > 2 else 1.0 for r in rows], dtype=float)
    w = w * np.where(y != NO_CALL, call_weight, 1.0)
    w = w / w.sum()
    d = n_features or X.shape[1]
    policy = Policy.zeros(d, feature_names)
    Y = np.eye(len(ACTIONS))[y]
    for _ in range(steps):
        P = softmax(X @ policy.weights)
        grad = X.T @ (w[:, None] * (P - Y)) + l2 * policy.weights
        policy.weights -= lr * grad
    return policy


def weighted_ce(policy: Policy, dataset, call_weight: float = 1.0) -> float:
    rows = list(dataset)
    X = np.asarray([r[0] for r in rows], dtype=float)
    y = np.asarray([r[1] for r in rows], dtype=int)
    w = np.asarray([r[2] if len(r) > 2 else 1.0 for r in rows], dtype=float)
    w = w * np.where(y != NO_CALL, call_weight, 1.0)
    P = softmax(X @ policy.weights)
    return float(-(w * np.log(P[np.arange(len(y)), y])).sum() / w.sum())


def train_grpo(env, policy_init: Policy, cfg: GrpoConfig | None = None,
               reward_cfg: RewardConfig | None = None, seed: int = 0,
               ref_policy: Policy | None = None):
    """Run GRPO against ``env``; returns ``(policy, history)``.

    ``env`` must provide ``sample_episode(rng)``, ``features(ep)``,
    ``label(ep)``, ``gold(ep)`` and ``rollout(ep, crops, rng) -> (answer, TokenAccount)``.
    """
    cfg = cfg or GrpoConfig()
    reward_cfg = reward_cfg or RewardConfig()
    rng = np.random.default_rng(seed)
    ref = (ref_policy or policy_init).copy()
    policy = policy_init.copy()
    history = []

    for step in range(cfg.steps):
        batches, rewards_all, areas, rtrs, calls = [], [], [], [], []
        for _ in range(cfg.prompts_per_step):
            ep = env.sample_episode(rng)
            x = env.features(ep)
            old = policy.probs(x)
            acts = rng.choice(len(old), size=cfg.group_size, p=old)
            rewards = []
            for a in acts:
                crops = action_crops(int(a))
                answer, acct = env.rollout(ep, crops, rng)
                br = trajectory_reward(answer, env.gold(ep), crops, env.label(ep), reward_cfg)
                rewards.append(br.total)
                areas.append(br.area)
                rtrs.append(acct.rtr)
                calls.append(bool(crops))
            rewards_all.extend(rewards)
            batches.append(make_batch(x, acts, rewards, old, ref.probs(x), cfg.eps_adv))

        for _ in range(cfg.updates_per_batch):
            grad = np.zeros_like(policy.weights)
            for b in batches:
                _, g = grpo_loss(b, policy, cfg)
                grad += g
            grad /= len(batches)
            norm = float(np.linalg.norm(grad))
            if not math.isfinite(norm):
                raise FloatingPointError(f"non-finite GRPO gradient at step {step}")
            if cfg.max_grad_norm and norm > cfg.max_grad_norm:
                grad *= cfg.max_grad_norm / norm
            policy.weights -= cfg.learning_rate * grad

        kl = float(np.mean([kl_categorical(policy.probs(b.features), b.ref_probs) for b in batches]))
        call_areas = [a for a, c in zip(areas, calls) if c]
        history.append({
            "step": step,
            "mean_reward": float(np.mean(rewards_all)),
            "call_rate": float(np.mean(calls)),
            "mean_area": float(np.mean(call_areas)) if call_areas else 0.0,
            "rtr": float(np.mean(rtrs)),
            "kl": kl,
        })
    return policy, history


def history_jsonl(history) -> str:
    return "".join(json.dumps(h) + "\n" for h in history)
