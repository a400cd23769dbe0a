# coding=utf-8
"""
配对显著性检验：双侧 Wilcoxon 符号秩检验
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from core.errors import ShapeMismatch, TooFewPairs

MIN_PAIRS = 5
# 非零差值个数不超过该值时枚举全部符号组合求精确 p 值
EXACT_MAX_N = 12


class WilcoxonResult(NamedTuple):
    statistic: float
    p_value: float
    n: int
    method: str


def _exact_p(ranks: np.ndarray, statistic: float) -> float:
    n = ranks.size
    patterns = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
    w_plus = patterns @ ranks
    total = ranks.sum()
    extreme = np.minimum(w_plus, total - w_plus) <= statistic + 1e-9
    return min(1.0, float(extreme.mean()))


def _normal_p(ranks: np.ndarray, statistic: float) -> float:
    n = ranks.size
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    if variance <= 0:
        return 1.0
    # 连续性校正
    z = max(0.0, (mean - statistic - 0.5) / np.sqrt(variance))
    return min(1.0, float(2.0 * norm.sf(z)))


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> WilcoxonResult:
    """
    双侧 Wilcoxon 符号秩检验

    差值 d = x - y，去掉零差值；|d| 取平均秩（并列取中间秩）；统计量 W = min(W+, W-)。
    n <= 12 时枚举 2^n 种符号组合求精确 p 值，否则用带并列校正和连续性校正的正态近似。

    Args:
        x, y: 等长的配对样本

    Returns:
        WilcoxonResult(statistic, p_value, n, method)；差值全为零时约定 p = 1.0
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeMismatch(f"配对样本长度不一致: {x.shape} vs {y.shape}")

    diff = x - y
    diff = diff[diff != 0]
    if diff.size == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, n=0, method="exact")
    if diff.size < MIN_PAIRS:
        raise TooFewPairs(f"去掉零差值后只剩 {diff.size} 对，至少需要 {MIN_PAIRS} 对")

    ranks = rankdata(np.abs(diff), method="average")
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())
    statistic = min(w_plus, w_minus)

    if diff.size <= EXACT_MAX_N:
        return WilcoxonResult(statistic, _exact_p(ranks, statistic), int(diff.size), "exact")
    return WilcoxonResult(statistic, _normal_p(ranks, statistic), int(diff.size), "normal")
