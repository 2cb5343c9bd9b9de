import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pietsp.metrics import MetricError, MetricReport, ndcg_at_k, phr, recall_at_k, top_k
from reference_metrics import ref_hit, ref_ndcg, ref_rank_all, ref_recall


def rank(scores, k):
    return top_k(np.asarray(scores, dtype=np.float64), k)


# --- top-k selection kernel -------------------------------------------------

def test_top_k_basic_order():
    assert list(rank([0.1, 0.9, 0.5], 2)) == [1, 2]


def test_top_k_tie_break_ascending_id():
    assert list(rank([1.0, 2.0, 2.0, 1.0, 2.0], 2)) == [1, 2]
    assert list(rank([1.0, 2.0, 2.0, 1.0, 2.0], 4)) == [1, 2, 4, 0]


def test_top_k_k_larger_than_vector():
    assert list(rank([3.0, 1.0, 2.0], 10)) == [0, 2, 1]


def test_top_k_rejects_bad_k():
    with pytest.raises(MetricError):
        rank([1.0], 0)


@given(st.integers(0, 2**32 - 1), st.integers(1, 60))
def test_top_k_matches_full_sort_reference(seed, k):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 200))
    # quantized scores force plenty of exact ties
    scores = np.round(rng.normal(size=n), 1)
    assert list(top_k(scores, k)) == ref_rank_all(scores)[: min(k, n)]


# --- spot values from closed forms -----------------------------------------

def test_recall_examples():
    assert recall_at_k([0, 2], {0, 1}) == 0.5
    assert recall_at_k([0, 1, 5], {0, 1}) == 1.0


def test_recall_empty_truth_rejected():
    with pytest.raises(MetricError):
        recall_at_k([0], set())


def test_ndcg_rank1_is_one():
    assert ndcg_at_k([3, 0, 1], {3}, 1) == 1.0
    assert ndcg_at_k([3, 0, 1], {3}, 3) == 1.0


def test_ndcg_rank2_single_truth_closed_form():
    value = ndcg_at_k([9, 3, 1], {3}, 2)
    assert abs(value - 1.0 / math.log2(3.0)) < 1e-15
    assert round(value, 5) == 0.63093


def test_phr_examples():
    assert phr([True, True]) == 1.0
    assert phr([True, False, False, False]) == 0.25


def test_phr_no_users_rejected():
    with pytest.raises(MetricError):
        phr([])


# --- oracle agreement -------------------------------------------------------

@given(st.integers(0, 2**32 - 1))
def test_metrics_match_bruteforce_reference(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 120))
    scores = np.round(rng.normal(size=n), 2)
    truth = set(int(t) for t in rng.choice(n, int(rng.integers(1, min(6, n) + 1)), replace=False))
    k = int(rng.integers(1, n + 1))
    ranked = top_k(scores, k)
    assert abs(recall_at_k(ranked, truth) - ref_recall(scores, truth, k)) < 1e-12
    assert abs(ndcg_at_k(ranked, truth, k) - ref_ndcg(scores, truth, k)) < 1e-12
    hit = any(int(i) in truth for i in ranked)
    assert hit == ref_hit(scores, truth, k)


# --- invariants -------------------------------------------------------------

@given(st.integers(0, 2**32 - 1))
def test_monotone_in_k_and_bounds(seed):
    rng = np.random.default_rng(seed)
    n = 50
    scores = rng.normal(size=n)
    truth = set(int(t) for t in rng.choice(n, 4, replace=False))
    ranked = top_k(scores, n)
    prev_recall, prev_dcg, prev_hit = 0.0, 0.0, False
    for k in (1, 3, 5, 10, 20, 50):
        r = recall_at_k(ranked[:k], truth)
        nd = ndcg_at_k(ranked, truth, k)
        dcg = sum(1.0 / math.log2(p + 2) for p in range(k) if int(ranked[p]) in truth)
        hit = any(int(i) in truth for i in ranked[:k])
        assert 0.0 <= r <= 1.0 and 0.0 <= nd <= 1.0
        assert r >= prev_recall and dcg >= prev_dcg - 1e-12
        assert hit >= prev_hit
        prev_recall, prev_dcg, prev_hit = r, dcg, hit


@given(st.integers(0, 2**32 - 1))
def test_invariant_to_monotone_score_transform(seed):
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=40)
    transformed = 3.0 * scores + 11.0  # strictly increasing
    assert list(top_k(scores, 10)) == list(top_k(transformed, 10))


def test_recall_positive_implies_hit():
    ranked = [5, 7, 2]
    truth = {2, 99}
    assert recall_at_k(ranked, truth) > 0
    assert any(i in truth for i in ranked)


def test_monte_carlo_recall_of_random_scores():
    # vocab 100, |truth| = 3, k = 10: expected recall 0.1
    rng = np.random.default_rng(42)
    total = 0.0
    trials = 2000
    for _ in range(trials):
        scores = rng.normal(size=100)
        truth = set(int(t) for t in rng.choice(100, 3, replace=False))
        total += recall_at_k(top_k(scores, 10), truth)
    assert abs(total / trials - 0.1) < 0.012


def test_report_table_and_json():
    rep = MetricReport(
        k_list=(10, 20),
        recall={10: 0.5, 20: 0.75},
        ndcg={10: 0.4, 20: 0.45},
        phr={10: 1.0, 20: 1.0},
        users_evaluated=8,
    )
    table = rep.format_table()
    assert "@10" in table and "Recall" in table and "0.7500" in table
    assert '"users_evaluated": 8' in rep.to_json()
