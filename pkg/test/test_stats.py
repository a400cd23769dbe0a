import itertools
import math

import numpy as np
import pytest

from core.errors import ShapeMismatch, TooFewPairs
from metrics import wilcoxon_signed_rank


def enumerated_p(diff) -> float:
    """全部符号组合下 min(W+, W-) 不大于观测值的比例"""
    abs_diff = np.abs(diff)
    ranks = np.array([np.mean(np.flatnonzero(np.sort(abs_diff) == v)) + 1 for v in abs_diff])
    observed = min(ranks[diff > 0].sum(), ranks[diff < 0].sum())
    total = ranks.sum()
    hits = 0
    patterns = list(itertools.product((0, 1), repeat=len(diff)))
    for signs in patterns:
        w_plus = sum(r for r, s in zip(ranks, signs) if s)
        hits += min(w_plus, total - w_plus) <= observed + 1e-9
    return min(1.0, hits / len(patterns))


def test_identical_samples():
    x = [0.9, 0.8, 0.85, 0.7, 0.95]
    result = wilcoxon_signed_rank(x, x)
    assert result.p_value == 1.0
    assert result.n == 0


def test_all_positive_differences():
    x = np.arange(1.0, 7.0) + 10.0
    y = np.arange(1.0, 7.0)
    result = wilcoxon_signed_rank(x, y)
    assert result.statistic == 0.0
    assert result.p_value == pytest.approx(2 / 2 ** 6)
    assert result.method == "exact"


def test_symmetric_in_arguments():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=9), rng.normal(size=9)
    forward = wilcoxon_signed_rank(x, y)
    backward = wilcoxon_signed_rank(y, x)
    assert forward.statistic == backward.statistic
    assert forward.p_value == pytest.approx(backward.p_value)


def test_exact_p_matches_enumeration():
    rng = np.random.default_rng(1)
    for n in range(5, 11):
        for _ in range(5):
            x = rng.normal(size=n)
            # 一半情况带并列的差值
            y = x - np.round(rng.normal(size=n), 1 if n % 2 else 3)
            diff = x - y
            if np.count_nonzero(diff) < 5:
                continue
            result = wilcoxon_signed_rank(x, y)
            assert result.p_value == pytest.approx(enumerated_p(diff[diff != 0]), abs=1e-12)


def test_tied_ranks_use_average():
    x = np.array([1.0, 1.0, 2.0, -3.0, 4.0, 5.0])
    result = wilcoxon_signed_rank(x, np.zeros(6))
    # |d| 的秩：1.5, 1.5, 3, 4, 5, 6
    assert result.statistic == pytest.approx(4.0)


def test_zero_differences_are_dropped():
    x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
    y = [1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    result = wilcoxon_signed_rank(x, y)
    assert result.n == 5
    assert result.p_value == pytest.approx(2 / 2 ** 5)


def test_too_few_pairs():
    with pytest.raises(TooFewPairs):
        wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0])
    with pytest.raises(TooFewPairs):
        wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0, 5.0], [1.0, 0.0, 0.0, 0.0, 0.0])


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        wilcoxon_signed_rank([1.0, 2.0], [1.0])


def test_normal_approximation():
    rng = np.random.default_rng(2)
    n = 30
    x = rng.normal(size=n) + 0.4
    y = rng.normal(size=n)
    result = wilcoxon_signed_rank(x, y)
    assert result.method == "normal"
    assert result.n == n

    diff = x - y
    order = np.argsort(np.abs(diff))
    ranks = np.empty(n)
    ranks[order] = np.arange(1, n + 1)
    w = min(ranks[diff > 0].sum(), ranks[diff < 0].sum())
    mean = n * (n + 1) / 4
    sd = math.sqrt(n * (n + 1) * (2 * n + 1) / 24)
    z = max(0.0, (mean - w - 0.5) / sd)
    assert result.statistic == pytest.approx(w)
    assert result.p_value == pytest.approx(math.erfc(z / math.sqrt(2)), rel=1e-9)
    assert 0.0 < result.p_value <= 1.0
