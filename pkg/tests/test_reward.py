import functools
import itertools

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cropcall.geometry import CROP_IDS, CropSet, crop_set_area
from cropcall.reward import (EmbeddingScorer, RewardConfig, ScoringBackendError, anls_score, exact_score,
                             levenshtein, token_f1, tool_cost, trajectory_reward)

ALL_SUBSETS = [CropSet(c) for k in range(1, 11) for c in itertools.combinations(CROP_IDS, k)]


def lev_oracle(a, b):
    @functools.lru_cache(None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
    return d(len(a), len(b))


def fixed(score):
    return RewardConfig(custom_scorer=lambda p, g: score)


class TestAnls:
    def test_examples(self):
        assert anls_score("Paris", "Paris") == 1.0
        assert anls_score("22", "22%") == pytest.approx(0.6667, abs=1e-4)
        assert anls_score("cat", "dog") == 0.0
        assert anls_score("", "") == 1.0
        assert anls_score("  PARIS ", "paris") == 1.0

    @given(st.text(max_size=8), st.text(max_size=8))
    def test_levenshtein_matches_oracle(self, a, b):
        assert levenshtein(a, b) == lev_oracle(a, b)

    @given(st.text(max_size=10), st.text(max_size=10))
    def test_symmetric_bounded(self, a, b):
        s = anls_score(a, b)
        assert s == anls_score(b, a)
        assert 0.0 <= s <= 1.0
        assert s == 0.0 or s >= 0.5


def test_other_scorers():
    assert exact_score("Yes ", "yes") == 1.0
    assert exact_score("no", "yes") == 0.0
    assert token_f1("the red car", "red car") == pytest.approx(0.8)
    assert token_f1("", "") == 1.0
    assert token_f1("a", "b") == 0.0


class TestToolCost:
    def test_examples(self):
        assert tool_cost([], "LR") == 0.0
        assert tool_cost([], "HR") == 2.0
        assert tool_cost(["0"], "HR") == pytest.approx(0.2525, abs=1e-12)
        assert tool_cost(["0"], "LR") == tool_cost(["0"], "HR")

    def test_constants_exact_over_all_subsets(self):
        for c in ALL_SUBSETS:
            for y in ("LR", "HR"):
                assert tool_cost(c, y) == 0.25 + 0.01 * crop_set_area(c)

    def test_recall_bias(self):
        miss = tool_cost([], "HR")
        assert all(miss > tool_cost(c, "HR") for c in ALL_SUBSETS)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            tool_cost([], "MR")

    def test_negative_costs_rejected(self):
        with pytest.raises(ValueError):
            RewardConfig(alpha_use=-0.1)


class TestTrajectoryReward:
    def test_examples(self):
        assert trajectory_reward("Paris", "Paris", [], "LR", RewardConfig(answer_scorer="exact")).total == 1.0
        assert trajectory_reward("x", "y", [], "HR", fixed(0.3)).total == pytest.approx(-1.7)
        r = trajectory_reward("x", "y", ["0"], "HR", fixed(0.9))
        assert r.total == pytest.approx(0.6475)
        assert r.area == 0.25 and r.total == r.r_ans - r.c_tool

    def test_area_monotone(self):
        # for fixed correctness, a strictly larger union costs strictly more
        cfg = fixed(1.0)
        rows = sorted((crop_set_area(c), trajectory_reward("", "", c, "HR", cfg).total) for c in ALL_SUBSETS)
        for (a1, t1), (a2, t2) in zip(rows, rows[1:]):
            assert t1 > t2 if a1 < a2 else t1 == t2

    def test_weights(self):
        cfg = RewardConfig(answer_weight=2.0, cost_weight=0.5, custom_scorer=lambda p, g: 0.5)
        assert trajectory_reward("", "", [], "HR", cfg).total == pytest.approx(1.0 - 1.0)

    def test_zero_cost(self):
        cfg = RewardConfig.zero_cost(answer_scorer="exact")
        assert trajectory_reward("a", "a", ["all"], "LR", cfg).total == 1.0
        assert trajectory_reward("a", "b", [], "HR", cfg).total == 0.0


class TestEmbeddingScorer:
    def test_cosine_from_endpoint(self, http_server):
        vecs = {"paris": [1.0, 0.0], "Paris, France": [0.6, 0.8], "far": [-1.0, 0.0]}
        http_server.respond = lambda path, body: (
            200, {"data": [{"embedding": vecs[t]} for t in body["input"]]})
        url = http_server.url + "/v1/embeddings"
        cfg = RewardConfig(answer_scorer="external-embedding", embedding_url=url, embedding_model="m")
        r = trajectory_reward("Paris, France", "paris", [], "LR", cfg)
        assert r.r_ans == pytest.approx(0.6)
        assert http_server.requests[0]["body"] == {"input": ["Paris, France", "paris"], "model": "m"}
        assert EmbeddingScorer(url)("far", "paris") == 0.0  # negative clips to 0

    def test_http_error_raises(self, http_server):
        http_server.respond = lambda path, body: (500, {"error": "boom"})
        with pytest.raises(ScoringBackendError):
            EmbeddingScorer(http_server.url)("a", "b")

    def test_unreachable_raises_never_zero(self):
        scorer = EmbeddingScorer("http://127.0.0.1:9/embeddings", client=httpx.Client(timeout=0.5))
        cfg = RewardConfig(custom_scorer=scorer)
        with pytest.raises(ScoringBackendError):
            trajectory_reward("a", "b", [], "LR", cfg)

    def test_missing_url(self):
        with pytest.raises(ScoringBackendError):
            RewardConfig(answer_scorer="external-embedding").scorer()
