# coding=utf-8
"""
分割损失（参考实现）

交叉熵 + soft Dice 的组合损失，L = CE + λ·Dice，带解析梯度，用于校验而不是训练。
概率场的最后一维是类别维，第 0 类为背景。
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from core.errors import ShapeMismatch
from core.yaml_utils import get_loss_defaults
from geom.models import LabelVolume

# 交叉熵中概率的下限
PROB_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ProbField:
    """体素级类别概率，values 形状为 (*dims, K)"""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim < 2 or values.shape[-1] < 2:
            raise ValueError(f"概率场最后一维是类别数，且 K >= 2: {values.shape}")
        if np.any(values < 0) or not np.allclose(values.sum(axis=-1), 1.0, rtol=0.0, atol=1e-6):
            raise ValueError("每个体素的概率向量必须非负且和为 1")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def dims(self) -> Tuple[int, ...]:
        return self.values.shape[:-1]

    @property
    def classes(self) -> int:
        return self.values.shape[-1]


ArrayLike = Union[ProbField, np.ndarray]


def one_hot(labels: Union[LabelVolume, np.ndarray], classes: int) -> np.ndarray:
    data = labels.data if isinstance(labels, LabelVolume) else np.asarray(labels)
    data = data.astype(np.int64)
    if data.size and (data.min() < 0 or data.max() >= classes):
        raise ShapeMismatch(f"标签取值超出类别数 K={classes}")
    return np.eye(classes, dtype=np.float64)[data]


def _as_arrays(p: ArrayLike, y) -> Tuple[np.ndarray, np.ndarray]:
    p_arr = p.values if isinstance(p, ProbField) else np.asarray(p, dtype=np.float64)
    if isinstance(y, LabelVolume):
        y = one_hot(y, p_arr.shape[-1])
    y_arr = np.asarray(y, dtype=np.float64)
    if p_arr.shape != y_arr.shape:
        raise ShapeMismatch(f"预测 {p_arr.shape} 与标签 {y_arr.shape} 形状不一致")
    return p_arr, y_arr


def cross_entropy(p: ArrayLike, y) -> Tuple[float, np.ndarray]:
    """
    CE = -(1/N) Σ_voxels log p[真实类别]，p 截断到 [1e-12, 1]

    Args:
        p: ProbField 或同形状数组（梯度检查时可传入未归一化的数组）
        y: one-hot 数组，或 LabelVolume（按 p 的类别数展开）

    Returns:
        (loss, 对 p 的梯度)
    """
    p_arr, y_arr = _as_arrays(p, y)
    n_voxels = int(np.prod(p_arr.shape[:-1]))
    clipped = np.clip(p_arr, PROB_FLOOR, 1.0)
    loss = -float(np.sum(y_arr * np.log(clipped))) / n_voxels
    in_range = (p_arr >= PROB_FLOOR) & (p_arr <= 1.0)
    grad = np.where(in_range, -y_arr / (n_voxels * clipped), 0.0)
    return loss, grad


def soft_dice_loss(p: ArrayLike, y, smooth: Optional[float] = None) -> Tuple[float, np.ndarray]:
    """
    soft Dice 损失，只对前景类（c = 1..K-1）取平均：

        loss = 1 - 1/(K-1) · Σ_c (2·Σ p_c·y_c + s) / (Σ p_c + Σ y_c + s)

    某一类在预测和标签中都为空且 s = 0 时，该类记为完全一致（项为 1，梯度为 0）。
    """
    if smooth is None:
        smooth = float(get_loss_defaults()["smooth"])
    if smooth < 0:
        raise ValueError(f"smooth 必须 >= 0: {smooth}")
    p_arr, y_arr = _as_arrays(p, y)
    classes = p_arr.shape[-1]
    axes = tuple(range(p_arr.ndim - 1))

    intersection = np.sum(p_arr * y_arr, axis=axes)
    p_sum = np.sum(p_arr, axis=axes)
    y_sum = np.sum(y_arr, axis=axes)
    numerator = 2.0 * intersection + smooth
    denominator = p_sum + y_sum + smooth

    grad = np.zeros_like(p_arr)
    total = 0.0
    for c in range(1, classes):
        if denominator[c] == 0:
            total += 1.0
            continue
        total += numerator[c] / denominator[c]
        grad[..., c] = -(2.0 * y_arr[..., c] * denominator[c] - numerator[c]) / (denominator[c] ** 2)
    foreground = classes - 1
    return 1.0 - total / foreground, grad / foreground


def composite_seg_loss(p: ArrayLike, y, lam: Optional[float] = None, smooth: Optional[float] = None) -> float:
    """L_seg = CE + λ·Dice，λ 默认 1"""
    if lam is None:
        lam = float(get_loss_defaults()["lambda"])
    ce, _ = cross_entropy(p, y)
    dice, _ = soft_dice_loss(p, y, smooth=smooth)
    return ce + lam * dice
