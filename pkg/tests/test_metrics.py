"""Retrieval metrics, ensembling, and the loss-share diagnostic."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialrank.metrics import (
    MetricsReport,
    ensemble_scores,
    loss_share_diagnostic,
    ndcg,
    rank_metrics,
    ranking_from_scores,
)


def ndcg_reference(ranking, relevance):
    """Independent direct-formula evaluation used as the oracle."""
    rel = list(relevance)
    k = sum(1 for r in rel if r > 0)
    if k == 0:
        return 1.0
    dcg = 0.0
    for i in range(k):
        dcg += rel[ranking[i]] / math.log2(i + 2)
    ideal = sorted(rel, reverse=True)
    idcg = 0.0
    for i in range(k):
        idcg += ideal[i] / math.log2(i + 2)
    return dcg / idcg


class TestRankMetrics:
    def test_gt_on_top(self):
        rr, h1, h5, h10, rank = rank_metrics([3, 0, 1, 2], 3)
        assert (rr, h1, h5, h10, rank) == (1.0, 1.0, 1.0, 1.0, 1.0)

    def test_gt_at_rank_seven(self):
        ranking = list(range(12))
        rr, h1, h5, h10, rank = rank_metrics(ranking, 6)
        assert rr == pytest.approx(1 / 7)
        assert (h1, h5, h10, rank) == (0.0, 0.0, 1.0, 7.0)

    def test_permuting_non_gt_leaves_values(self):
        base = rank_metrics([4, 2, 0, 1, 3], 0)
        swapped = rank_metrics([2, 4, 0, 3, 1], 0)
        assert base == swapped

    def test_gt_absent(self):
        with pytest.raises(ValueError, match="absent"):
            rank_metrics([0, 1], 5)


class TestNdcg:
    def test_ideal_order_scores_one(self):
        rel = [0.0, 1.0, 0.5, 0.0]
        assert ndcg([1, 2, 0, 3], rel) == pytest.approx(1.0, abs=1e-15)

    def test_hand_worked_example(self):
        # relevances a=1.0 b=0.5, submitted [b, a, ...]
        rel = [1.0, 0.5, 0.0, 0.0]
        value = ndcg([1, 0, 2, 3], rel)
        expected = (0.5 / 1.0 + 1.0 / math.log2(3)) / (1.0 + 0.5 / math.log2(3))
        assert value == pytest.approx(expected, abs=1e-12)
        assert value == pytest.approx(0.85972, abs=5e-6)

    def test_matches_reference_on_random_cases(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            C = int(rng.integers(2, 21))
            rel = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=C)
            ranking = list(rng.permutation(C))
            assert ndcg(ranking, rel) == pytest.approx(ndcg_reference(ranking, rel), abs=1e-12)

    def test_equal_relevance_permutation_invariance_exhaustive(self):
        # Every candidate relabeling that maps each option to one of equal
        # relevance must leave the score unchanged; exhaustive for C <= 6.
        rng = np.random.default_rng(1)
        for C in range(2, 7):
            rel = rng.choice([0.0, 0.5, 1.0], size=C)
            base_ranking = list(rng.permutation(C))
            base = ndcg(base_ranking, rel)
            for perm in itertools.permutations(range(C)):
                if all(rel[perm[i]] == rel[i] for i in range(C)):
                    relabeled = [perm[i] for i in base_ranking]
                    assert ndcg(relabeled, rel) == pytest.approx(base, abs=1e-15)

    def test_all_zero_relevance_defined_as_one(self):
        assert ndcg([2, 0, 1], [0.0, 0.0, 0.0]) == 1.0

    def test_one_hot_relevance_monotone_in_gt_rank(self):
        rel = [0.0, 0.0, 1.0, 0.0]
        values = []
        for pos in range(4):
            ranking = [i for i in range(4) if i != 2]
            ranking.insert(pos, 2)
            values.append(ndcg(ranking, rel))
        assert values[0] == 1.0
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_validation(self):
        with pytest.raises(ValueError, match="relevance"):
            ndcg([0, 1], None)
        with pytest.raises(ValueError, match="length"):
            ndcg([0, 1], [1.0])
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            ndcg([0, 1], [2.0, 0.0])
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            ndcg([0, 1], [1.0, -0.5])


class TestEnsemble:
    def test_single_model_identity(self):
        scores = [0.3, 0.9, 0.1]
        out = ensemble_scores([scores])
        assert ranking_from_scores(out) == ranking_from_scores(scores)

    def test_doubling_preserves_ranking(self):
        scores = [0.3, 0.9, 0.1]
        out = ensemble_scores([scores, scores])
        np.testing.assert_allclose(out, np.array(scores) * 2)
        assert ranking_from_scores(out) == ranking_from_scores(scores)

    def test_hand_sum(self):
        out = ensemble_scores([[1.0, 0.0], [0.0, 0.5]])
        np.testing.assert_array_equal(out, [1.0, 0.5])
        assert ranking_from_scores(out) == [0, 1]

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            ensemble_scores([[1.0, 2.0], [1.0]])

    @given(st.lists(st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3), min_size=1, max_size=4),
           st.permutations([0, 1, 2]))
    @settings(deadline=None, max_examples=50)
    def test_permutation_equivariance(self, vectors, perm):
        base = ensemble_scores(vectors)
        permuted = ensemble_scores([[v[p] for p in perm] for v in vectors])
        np.testing.assert_allclose(permuted, [base[p] for p in perm], atol=1e-12)


class TestLossShare:
    def test_single_value_single_bin(self):
        diag = loss_share_diagnostic([-2.0, -2.0, -2.0], tau=0.5)
        assert diag.cumulative[-1] == pytest.approx(1.0)
        assert diag.easy_share == pytest.approx(1.0)
        assert len(diag.bin_edges) == 2

    def test_hand_worked_share_drop(self):
        # 99 margins of -1 give share 1; replacing one with +1 at tau=0.25
        # leaves 99 e^-4 / (99 e^-4 + e^4)
        all_easy = loss_share_diagnostic([-1.0] * 99, tau=0.25)
        assert all_easy.easy_share == pytest.approx(1.0, abs=1e-12)
        mixed = loss_share_diagnostic([-1.0] * 98 + [1.0], tau=0.25)
        expected = 98 * math.exp(-4) / (98 * math.exp(-4) + math.exp(4))
        assert mixed.easy_share == pytest.approx(expected, abs=1e-12)
        spec_variant = 99 * math.exp(-4) / (99 * math.exp(-4) + math.exp(4))
        assert loss_share_diagnostic([-1.0] * 99 + [1.0], tau=0.25).easy_share == pytest.approx(
            spec_variant, abs=1e-12
        )
        assert spec_variant == pytest.approx(0.0322, abs=1e-4)

    def test_curve_nondecreasing_ends_at_one(self):
        rng = np.random.default_rng(2)
        diag = loss_share_diagnostic(rng.normal(size=500), tau=0.25)
        cum = diag.cumulative
        assert all(a <= b + 1e-12 for a, b in zip(cum, cum[1:]))
        assert cum[-1] == pytest.approx(1.0, abs=1e-12)

    def test_all_negative_margins_share_constant_in_tau(self):
        margins = [-3.0, -1.0, -0.5]
        shares = [loss_share_diagnostic(margins, tau).easy_share for tau in (1.0, 0.5, 0.25)]
        assert all(s == pytest.approx(1.0) for s in shares)

    def test_share_nonincreasing_as_tau_cools_with_hard_negative(self):
        margins = [-1.0] * 50 + [0.5]
        shares = [loss_share_diagnostic(margins, tau).easy_share for tau in (1.0, 0.5, 0.25)]
        assert shares[0] > shares[1] > shares[2]

    def test_validation(self):
        with pytest.raises(ValueError, match="at least one"):
            loss_share_diagnostic([], 0.5)
        with pytest.raises(ValueError, match="positive"):
            loss_share_diagnostic([1.0], 0.0)


class TestReport:
    def test_aggregation_and_serialization(self):
        report = MetricsReport.aggregate(
            [(1.0, 1.0, 1.0, 1.0, 1.0, 1.0), (0.5, 0.5, 0.0, 1.0, 1.0, 2.0)]
        )
        assert report.ndcg == pytest.approx(0.75)
        assert report.mrr == pytest.approx(0.75)
        assert report.r1 == pytest.approx(0.5)
        assert report.mean_rank == pytest.approx(1.5)
        assert report.turns == 2
        payload = report.to_dict()
        assert set(payload) >= {"ndcg", "mrr", "r1", "r5", "r10", "mean_rank", "turns"}

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="zero turns"):
            MetricsReport.aggregate([])
