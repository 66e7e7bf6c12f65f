import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ktnlab.metrics import accuracy, mrr, ndcg


def test_ndcg_perfect():
    assert ndcg([[3.0, 2.0, 1.0]], [[1, 0, 0]]) == 1.0


def test_ndcg_relevant_second_of_three():
    assert abs(ndcg([[0.9, 0.5, 0.1]], [[0, 1, 0]]) - 1 / math.log2(3)) < 1e-12


def test_ndcg_ties_rank_lower_index_first():
    # all equal: class 0 is ranked first, class 2 last
    assert ndcg([[1.0, 1.0, 1.0]], [[1, 0, 0]]) == 1.0
    assert abs(ndcg([[1.0, 1.0, 1.0]], [[0, 0, 1]]) - 0.5) < 1e-12


def test_ndcg_skips_rows_without_relevance():
    v, skipped = ndcg([[1.0, 0.0], [0.0, 1.0]], [[1, 0], [0, 0]], return_skipped=True)
    assert v == 1.0 and skipped == 1
    assert math.isnan(ndcg([[1.0, 0.0]], [[0, 0]]))


def test_mrr_examples():
    assert mrr([[0.9, 0.1]], [[1, 0]]) == 1.0
    assert mrr([[0.9, 0.5, 0.1]], [[0, 1, 0]]) == 0.5
    # relevant at ranks 2 and 5: the highest-ranked one counts
    s = [[5.0, 4.0, 3.0, 2.0, 1.0]]
    assert mrr(s, [[0, 1, 0, 0, 1]]) == 0.5


def test_accuracy_examples():
    y = np.eye(2)[[0, 1, 1]]
    assert accuracy(y, y) == 1.0
    assert accuracy(1 - y, y) == 0.0
    # tie goes to class 0
    assert accuracy([[0.5, 0.5]], [[1, 0]]) == 1.0


def test_accuracy_matches_loop():
    rng = np.random.default_rng(3)
    s = rng.standard_normal((10, 4))
    y = np.eye(4)[rng.integers(0, 4, 10)]
    hits = 0
    for i in range(10):
        best = 0
        for c in range(4):
            if s[i, c] > s[i, best]:
                best = c
        hits += y[i, best]
    assert accuracy(s, y) == hits / 10


def test_shape_mismatch():
    with pytest.raises(ValueError):
        ndcg(np.ones((2, 3)), np.ones((2, 2)))


def loop_ndcg(s, r):
    vals = []
    for si, ri in zip(s, r):
        if ri.sum() == 0:
            continue
        order = sorted(range(len(si)), key=lambda c: (-si[c], c))
        dcg = sum(ri[c] / math.log2(k + 2) for k, c in enumerate(order))
        ideal = sum(v / math.log2(k + 2) for k, v in enumerate(sorted(ri, reverse=True)))
        vals.append(dcg / ideal)
    return float(np.mean(vals))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 8), c=st.integers(2, 6))
def test_properties(seed, n, c):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 4, (n, c)).astype(float)  # integer scores exercise ties
    r = (rng.random((n, c)) < 0.4).astype(float)
    r[np.arange(n), rng.integers(0, c, n)] = 1
    y = np.eye(c)[rng.integers(0, c, n)]
    f = lambda x: np.exp(0.5 * x) + 3 * x  # strictly increasing
    assert ndcg(s, r) == pytest.approx(loop_ndcg(s, r), abs=1e-12)
    assert ndcg(f(s), r) == ndcg(s, r)
    assert mrr(f(s), r) == mrr(s, r)
    assert accuracy(f(s), y) == accuracy(s, y)
    for v in (ndcg(s, r), mrr(s, r), accuracy(s, y)):
        assert 0 <= v <= 1
