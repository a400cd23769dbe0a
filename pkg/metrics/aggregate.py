# coding=utf-8
"""
分组汇总

按病种或按时相汇总每个病例的指标，输出 均值 ± 样本标准差。
按时相分组时额外给出 Average 行（ED 与 ES 的全部样本合并）。
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from structlog import get_logger

from core.errors import EmptyInput, MissingPhase

from .metrics import challenge_score, phase_view_average
from .models import CaseMetrics, GroupSummary, MetricSummary, Pathology, Phase, View

logger = get_logger()

METRIC_NAMES = ("DS_SA", "HD_SA", "DS_LA", "HD_LA")
AVERAGE_KEY = "Average"


def summarize(values: Iterable[Optional[float]]) -> Optional[MetricSummary]:
    """缺失值（None）不参与统计；全部缺失时返回 None"""
    present = np.array([v for v in values if v is not None], dtype=np.float64)
    if present.size == 0:
        return None
    std = float(np.std(present, ddof=1)) if present.size > 1 else 0.0
    return MetricSummary(mean=float(present.mean()), std=std, count=int(present.size))


def format_cell(mean: float, std: float) -> str:
    """均值 ± 标准差，如 0.920 ± 0.0500，各保留 3 位有效数字"""
    return f"{mean:#.3g} ± {std:#.3g}"


def _phase_values(case: CaseMetrics, phase: Phase) -> Dict[str, Optional[float]]:
    sa = case.get(phase, View.SA)
    la = case.get(phase, View.LA)
    if sa is None or la is None:
        raise MissingPhase(f"{case.case_id} 缺少 {phase.value} 时相的指标")
    return {"DS_SA": sa.dice, "HD_SA": sa.hd_mm, "DS_LA": la.dice, "HD_LA": la.hd_mm}


def case_values(case: CaseMetrics) -> Dict[str, Optional[float]]:
    """病例级指标：ED/ES 平均后的四项 + 综合得分（HD 缺失时得分也缺失）"""
    ds_sa, hd_sa, ds_la, hd_la = phase_view_average(case)
    values = {"DS_SA": ds_sa, "HD_SA": hd_sa, "DS_LA": ds_la, "HD_LA": hd_la}
    values["score"] = None if None in values.values() else challenge_score(ds_sa, hd_sa, ds_la, hd_la)
    return values


def _summaries(key: str, samples: Sequence[Dict[str, Optional[float]]], names: Sequence[str]) -> GroupSummary:
    metrics = OrderedDict()
    for name in names:
        column = [s.get(name) for s in samples]
        missing = sum(v is None for v in column)
        if missing:
            logger.warning("部分样本指标缺失，已从汇总中排除", group=key, metric=name, missing=missing)
        metrics[name] = summarize(column)
    return GroupSummary(key=key, count=len(samples), metrics=metrics)


def aggregate_group(cases: List[CaseMetrics], key: str) -> List[GroupSummary]:
    """
    Args:
        cases: 完整的病例指标（四个 时相/视图 都存在）
        key: "pathology" 或 "phase"

    Returns:
        pathology: 按病种词表顺序，仅包含出现过的病种，指标含 score
        phase: ED、ES 两行 + Average 行
    """
    if not cases:
        raise EmptyInput("没有可汇总的病例")

    if key == "pathology":
        names = METRIC_NAMES + ("score",)
        groups = []
        for pathology in Pathology:
            members = [case_values(c) for c in cases if c.pathology == pathology]
            if members:
                groups.append(_summaries(pathology.value, members, names))
        return groups

    if key == "phase":
        per_phase = {phase: [_phase_values(c, phase) for c in cases] for phase in Phase}
        groups = [_summaries(phase.value, per_phase[phase], METRIC_NAMES) for phase in Phase]
        pooled = per_phase[Phase.ED] + per_phase[Phase.ES]
        groups.append(_summaries(AVERAGE_KEY, pooled, METRIC_NAMES))
        return groups

    raise ValueError(f"不支持的分组方式: {key}")
