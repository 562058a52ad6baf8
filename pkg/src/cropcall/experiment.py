"""Cold-start SFT followed by GRPO on the simulator, seeded the same way everywhere."""
from __future__ import annotations

import numpy as np

from . import sim_env
from .config import RunConfig
from .grpo import Policy, sft_init_policy, train_grpo


def fit_reference(cfg: RunConfig, seed: int | None = None, rows=None) -> Policy:
    """Behaviour-clone the oracle rule (or the given ``rows``) into the reference policy."""
    seed = cfg.env.seed if seed is None else seed
    if rows is None:
        rows = sim_env.oracle_sft_dataset(cfg.env, cfg.sft.n_samples, np.random.default_rng(seed))
    s = cfg.sft
    return sft_init_policy(rows, sim_env.N_FEATURES, lr=s.lr, steps=s.steps, call_weight=s.call_weight,
                           l2=s.l2, feature_names=sim_env.FEATURE_NAMES)


def run_grpo(cfg: RunConfig, ref: Policy, seed: int | None = None):
    """GRPO from ``ref`` on the simulator; rollouts use ``seed + 1``."""
    seed = cfg.env.seed if seed is None else seed
    return train_grpo(sim_env.SimEnv(cfg.env), ref, cfg.grpo, cfg.reward, seed=seed + 1)
