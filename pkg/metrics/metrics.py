# coding=utf-8
"""
分割评估指标

1 dice_score: 体素重叠 2|A∩B| / (|A|+|B|)
2 hausdorff_mm: 边界体素中心之间的对称 Hausdorff 距离（毫米）
3 phase_view_average / challenge_score: ED/ES 平均与挑战赛综合得分
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import binary_erosion, generate_binary_structure
from scipy.spatial import cKDTree
from structlog import get_logger

from core.errors import EmptyMask, MissingPhase, ShapeMismatch
from geom.models import LabelVolume

from .models import CaseMetrics, Phase, View

logger = get_logger()

SA_WEIGHT = 0.75
LA_WEIGHT = 0.25


def _check_same_dims(a: LabelVolume, b: LabelVolume) -> None:
    if a.dims != b.dims:
        raise ShapeMismatch(f"两个标签体尺寸不一致: {a.dims} vs {b.dims}")


def dice_score(a: LabelVolume, b: LabelVolume, label: int) -> float:
    """两个掩码都为空时记为 1.0"""
    _check_same_dims(a, b)
    mask_a = a.mask(label)
    mask_b = b.mask(label)
    total = int(mask_a.sum()) + int(mask_b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(mask_a, mask_b).sum()) / total


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """
    边界体素：自身有标签，且至少一个面邻居无标签或在网格外

    单层体（nz == 1）只看层内 4 邻域，否则看 3D 6 邻域。
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[2] == 1:
        plane = mask[:, :, 0]
        eroded = binary_erosion(plane, structure=generate_binary_structure(2, 1), border_value=0)
        return (plane & ~eroded)[:, :, None]
    eroded = binary_erosion(mask, structure=generate_binary_structure(3, 1), border_value=0)
    return mask & ~eroded


def _boundary_points(volume: LabelVolume, label: int) -> np.ndarray:
    idx = np.argwhere(boundary_mask(volume.mask(label)))
    return volume.grid.affine(idx)


def hausdorff_mm(a: LabelVolume, b: LabelVolume, label: int, percentile: float = 100) -> float:
    """
    对称 Hausdorff 距离（毫米）

    Args:
        a, b: 同一网格上的标签体
        label: 参与计算的标签值
        percentile: 100 为完整 Hausdorff；95 为 HD95（两个方向的距离合并后取分位数）

    Returns:
        距离（毫米）；任一掩码为空时抛出 EmptyMask
    """
    _check_same_dims(a, b)
    if not 0 < percentile <= 100:
        raise ValueError(f"percentile 必须在 (0, 100] 内: {percentile}")
    points_a = _boundary_points(a, label)
    points_b = _boundary_points(b, label)
    if len(points_a) == 0 or len(points_b) == 0:
        raise EmptyMask(f"标签 {label} 的掩码为空，Hausdorff 距离无定义")

    a_to_b, _ = cKDTree(points_b).query(points_a)
    b_to_a, _ = cKDTree(points_a).query(points_b)
    if percentile == 100:
        return float(max(a_to_b.max(), b_to_a.max()))
    return float(np.percentile(np.hstack((a_to_b, b_to_a)), percentile))


def evaluate_pair(gt: LabelVolume, pred: LabelVolume, label: int,
                  percentile: float = 100) -> Tuple[float, Optional[float]]:
    """
    (Dice, HD)；HD 无定义时返回 None，并记录警告
    """
    dice = dice_score(gt, pred, label)
    try:
        hd = hausdorff_mm(gt, pred, label, percentile=percentile)
    except EmptyMask:
        logger.warning("掩码为空，HD 记为缺失，不参与汇总", label=label,
                       gt_voxels=int(gt.mask(label).sum()), pred_voxels=int(pred.mask(label).sum()))
        hd = None
    return dice, hd


def phase_view_average(c: CaseMetrics) -> Tuple[float, Optional[float], float, Optional[float]]:
    """
    (DS_SA, HD_SA, DS_LA, HD_LA)，每项是 ED 与 ES 的算术平均

    任一时相的 HD 缺失时，对应视图的 HD 平均为 None。
    """
    result = []
    for view in (View.SA, View.LA):
        entries = []
        for phase in (Phase.ED, Phase.ES):
            entry = c.get(phase, view)
            if entry is None:
                raise MissingPhase(f"{c.case_id} 缺少 {phase.value}/{view.value} 指标")
            entries.append(entry)
        result.append((entries[0].dice + entries[1].dice) / 2.0)
        hds = [e.hd_mm for e in entries]
        result.append(None if None in hds else (hds[0] + hds[1]) / 2.0)
    return tuple(result)


def challenge_score(ds_sa: float, hd_sa: float, ds_la: float, hd_la: float) -> float:
    """score = (0.75·(DS_SA + HD_SA) + 0.25·(DS_LA + HD_LA)) / 2，按原式计算，不做归一化"""
    return (SA_WEIGHT * (ds_sa + hd_sa) + LA_WEIGHT * (ds_la + hd_la)) / 2.0
