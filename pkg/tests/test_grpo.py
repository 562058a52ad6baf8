import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cropcall.geometry import InvalidInputError
from cropcall.grpo import (ACTIONS, NO_CALL, GrpoConfig, Policy, PolicyLoadError, action_crops, action_index,
                           clipped_term, group_advantages, grpo_loss, history_jsonl, kl_categorical,
                           make_batch, sft_init_policy, softmax, train_grpo)
from cropcall.reward import RewardConfig
from cropcall.sim_env import (FEATURE_NAMES, N_FEATURES, REGIONS, EnvConfig, SimEnv, encode_features,
                              oracle_sft_dataset, policy_value)


def random_simplex(rng, k):
    return rng.dirichlet(np.ones(k))


def random_instance(rng, n_actions=3, d=4):
    """A random group whose ratios all sit away from the clip kinks."""
    cfg = GrpoConfig(beta=float(rng.uniform(0, 1)), eps_clip=0.2)
    while True:
        pol = Policy(rng.normal(size=(d, n_actions)), [], tuple(range(n_actions)))
        x = rng.normal(size=d)
        G = int(rng.integers(2, 9))
        acts = rng.integers(0, n_actions, size=G)
        old = softmax(x @ (pol.weights + 0.3 * rng.normal(size=pol.weights.shape)))
        ratio = pol.probs(x)[acts] / old[acts]
        if np.all(np.minimum(np.abs(ratio - 0.8), np.abs(ratio - 1.2)) > 1e-3):
            break
    batch = make_batch(x, acts, rng.normal(size=G), old, random_simplex(rng, n_actions))
    return batch, pol, cfg


def fd_gradient(batch, pol, cfg, h=1e-6):
    g = np.zeros_like(pol.weights)
    for idx in np.ndindex(*pol.weights.shape):
        p, m = pol.copy(), pol.copy()
        p.weights[idx] += h
        m.weights[idx] -= h
        g[idx] = (grpo_loss(batch, p, cfg)[0] - grpo_loss(batch, m, cfg)[0]) / (2 * h)
    return g


class TestAdvantages:
    def test_examples(self):
        assert list(group_advantages([2, 2, 2])) == [0, 0, 0]
        np.testing.assert_allclose(group_advantages([0, 2], 1e-4), [-1 / 1.0001, 1 / 1.0001])
        np.testing.assert_allclose(group_advantages([1, 2, 3], 1e-4), [-1.2246, 0, 1.2246], atol=1e-4)

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            group_advantages([1.0])

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=16))
    def test_mean_zero_and_std(self, rewards):
        a = group_advantages(rewards, 1e-4)
        sigma = float(np.std(rewards))
        assert abs(a.mean()) < 1e-9
        if sigma > 0:
            assert a.std() == pytest.approx(sigma / (sigma + 1e-4), rel=1e-9)
            assert 0 < a.std() < 1


class TestKl:
    def test_examples(self):
        assert kl_categorical([0.3, 0.7], [0.3, 0.7]) == 0.0
        assert kl_categorical([0.5, 0.5], [0.25, 0.75]) == pytest.approx(
            0.5 * math.log(2) + 0.5 * math.log(0.5 / 0.75), abs=1e-12)
        assert kl_categorical([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.14384, abs=1e-5)
        assert kl_categorical([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2))

    def test_errors(self):
        with pytest.raises(InvalidInputError):
            kl_categorical([0.5, 0.5], [1.0])
        with pytest.raises(InvalidInputError):
            kl_categorical([0.5, 0.5], [1.0, 0.0])

    def test_non_negative_on_random_pairs(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            k = int(rng.integers(2, 12))
            p, q = random_simplex(rng, k), random_simplex(rng, k)
            assert kl_categorical(p, q) > 0
            assert kl_categorical(p, p) == pytest.approx(0.0, abs=1e-15)


class TestClippedTerm:
    def test_examples(self):
        assert clipped_term(1.0, 0.7) == 0.7
        assert clipped_term(1.5, 1.0, 0.2) == pytest.approx(1.2)
        assert clipped_term(0.5, -1.0, 0.2) == pytest.approx(-0.8)

    @given(st.floats(0.01, 5), st.floats(-3, 3))
    def test_pessimistic_bound(self, r, a):
        assert clipped_term(r, a) <= r * a + 1e-12


class TestGrpoLoss:
    def test_zero_advantage_at_reference(self):
        pol = Policy.zeros(3)
        x = np.array([1.0, 0.0, 1.0])
        p = pol.probs(x)
        batch = make_batch(x, [0, 1, 2], [1.0, 1.0, 1.0], p, p)
        loss, grad = grpo_loss(batch, pol, GrpoConfig())
        assert loss == 0.0 and np.all(grad == 0)

    def test_beta_zero_unit_ratio(self):
        rng = np.random.default_rng(0)
        pol = Policy(rng.normal(size=(3, 11)))
        x = np.ones(3)
        p = pol.probs(x)
        batch = make_batch(x, rng.integers(0, 11, 6), rng.normal(size=6), p, random_simplex(rng, 11))
        loss, _ = grpo_loss(batch, pol, GrpoConfig(beta=0.0))
        assert loss == pytest.approx(-batch.advantages.mean(), abs=1e-12)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_zero_old_prob_rejected(self):
        pol = Policy.zeros(2, n_actions=3)
        batch = make_batch(np.ones(2), [0, 1], [0.0, 1.0], [0.0, 0.5, 0.5], [1 / 3] * 3)
        with pytest.raises(InvalidInputError):
            grpo_loss(batch, pol, GrpoConfig())

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            batch, pol, cfg = random_instance(rng)
            _, g = grpo_loss(batch, pol, cfg)
            g_fd = fd_gradient(batch, pol, cfg)
            worst = max(worst, np.abs(g - g_fd).max() / max(np.abs(g_fd).max(), 1e-12))
        assert worst < 1e-5

    def test_config_validation(self):
        for bad in (dict(group_size=1), dict(eps_clip=1.0), dict(beta=-1.0)):
            with pytest.raises(InvalidInputError):
                GrpoConfig(**bad)


class TestPolicy:
    def test_action_space(self):
        assert len(ACTIONS) == 11 and ACTIONS[NO_CALL] is None
        assert list(action_crops(0)) == [] and list(action_crops(10)) == ["all"]
        assert action_index(["3"]) == 4
        with pytest.raises(InvalidInputError):
            action_index(["0", "1"])

    def test_probs_sum_to_one(self):
        rng = np.random.default_rng(1)
        pol = Policy(rng.normal(size=(N_FEATURES, 11)) * 20, FEATURE_NAMES)
        for _ in range(20):
            assert pol.probs(rng.normal(size=N_FEATURES)).sum() == pytest.approx(1.0)

    def test_json_round_trip(self):
        pol = Policy(np.arange(22, dtype=float).reshape(2, 11) / 7, ["a", "b"])
        back = Policy.from_json(pol.to_json())
        np.testing.assert_array_equal(back.weights, pol.weights)
        assert back.feature_names == ["a", "b"] and back.to_json() == pol.to_json()

    @pytest.mark.parametrize("text", ["not json", '{"format": "other"}',
                                      '{"format": "cropcall.policy", "version": 99}'])
    def test_bad_json(self, text):
        with pytest.raises(PolicyLoadError):
            Policy.from_json(text)


class TestSft:
    def test_single_action_dataset(self):
        rows = [(np.array([1.0]), 3)] * 10
        pol = sft_init_policy(rows, lr=1.0, steps=2000)
        assert pol.probs(np.array([1.0]))[3] >= 0.99

    def test_bias_only_marginals(self):
        rows = [(np.array([1.0]), 0)] * 50 + [(np.array([1.0]), 5)] * 50
        p = sft_init_policy(rows, lr=1.0, steps=5000).probs(np.array([1.0]))
        assert p[0] == pytest.approx(0.5, abs=0.01) and p[5] == pytest.approx(0.5, abs=0.01)
        rows = [(np.array([1.0]), 0)] * 50 + [(np.array([1.0]), 3)] * 30 + [(np.array([1.0]), 7)] * 20
        p = sft_init_policy(rows, lr=1.0, steps=5000).probs(np.array([1.0]))
        np.testing.assert_allclose(p[[0, 3, 7]], [0.5, 0.3, 0.2], atol=0.01)

    def test_call_upweighting_matches_weighted_mle(self):
        # three one-hot contexts with different call frequencies
        counts = [(8, 2), (5, 5), (1, 9)]  # (no-call, call) per context
        rows = []
        for k, (n0, n1) in enumerate(counts):
            x = np.eye(3)[k]
            rows += [(x, NO_CALL)] * n0 + [(x, 2)] * n1
        pol = sft_init_policy(rows, lr=2.0, steps=20000, call_weight=5.0)
        fitted, empirical = 0.0, 0.0
        for k, (n0, n1) in enumerate(counts):
            p_call = 1 - pol.probs(np.eye(3)[k])[NO_CALL]
            mle = 5 * n1 / (5 * n1 + n0)
            assert p_call == pytest.approx(mle, abs=0.01)
            fitted += (n0 + n1) * p_call
            empirical += n1
        assert fitted / len(rows) > empirical / len(rows)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            sft_init_policy([])


def _contexts():
    return [np.array(encode_features(False, None))] + [np.array(encode_features(True, r)) for r in REGIONS]


@pytest.fixture(scope="module")
def reference():
    env = EnvConfig()
    rows = oracle_sft_dataset(env, 2000, np.random.default_rng(0))
    return sft_init_policy(rows, N_FEATURES, lr=1.0, steps=2000, call_weight=5.0, l2=0.05,
                           feature_names=FEATURE_NAMES)


class TestTrainGrpo:
    def test_kl_pinning(self, reference):
        # step size scaled with 1/beta keeps plain gradient steps stable on the stiff KL term
        cfg = GrpoConfig(beta=1e4, learning_rate=1e-4, steps=200)
        pol, _ = train_grpo(SimEnv(), reference, cfg, RewardConfig(), seed=3)
        tv = max(0.5 * np.abs(pol.probs(x) - reference.probs(x)).sum() for x in _contexts())
        assert tv < 0.01

    def test_zero_cost_does_not_lower_call_rate(self, reference):
        env = EnvConfig()
        before = policy_value(env, RewardConfig(), reference.probs)["call_rate"]
        pol, _ = train_grpo(SimEnv(env), reference, GrpoConfig(), RewardConfig.zero_cost(), seed=1)
        after = policy_value(env, RewardConfig(), pol.probs)["call_rate"]
        assert after >= before

    def test_history_and_determinism(self, reference):
        cfg = GrpoConfig(steps=20)
        p1, h1 = train_grpo(SimEnv(), reference, cfg, RewardConfig(), seed=7)
        p2, h2 = train_grpo(SimEnv(), reference, cfg, RewardConfig(), seed=7)
        assert history_jsonl(h1) == history_jsonl(h2)
        assert np.array_equal(p1.weights, p2.weights)
        assert set(h1[0]) == {"step", "mean_reward", "call_rate", "mean_area", "rtr", "kl"}
        assert [h["step"] for h in h1] == list(range(20))
        assert h1[0]["kl"] >= 0

    def test_scoring_errors_propagate(self, reference):
        from cropcall.reward import ScoringBackendError

        def boom(p, g):
            raise ScoringBackendError("down")

        with pytest.raises(ScoringBackendError):
            train_grpo(SimEnv(), reference, GrpoConfig(steps=1), RewardConfig(custom_scorer=boom))

    def test_non_finite_gradient_aborts(self, reference):
        bad = reference.copy()
        bad.weights[:] = np.nan
        with pytest.raises((FloatingPointError, ValueError)):
            train_grpo(SimEnv(), bad, GrpoConfig(steps=1), RewardConfig())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_property_random_seeds(seed):
    batch, pol, cfg = random_instance(np.random.default_rng(seed), n_actions=4, d=3)
    _, g = grpo_loss(batch, pol, cfg)
    g_fd = fd_gradient(batch, pol, cfg)
    assert np.abs(g - g_fd).max() <= 1e-5 * max(np.abs(g_fd).max(), 1e-12)
