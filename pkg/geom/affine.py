# coding=utf-8
"""
仿射变换

4x4 齐次矩阵，把体素索引 (i, j, k, 1) 映射到物理坐标 (x, y, z, 1)（毫米）。
体素中心位于整数索引处；全部运算使用 float64。
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from nibabel.affines import apply_affine

from core.errors import SingularAffine

# 3x3 线性部分行列式的最小绝对值，低于它视为奇异
DET_EPS = 1e-9

_BOTTOM_ROW = np.array([0.0, 0.0, 0.0, 1.0])


class PhysicalPoint(NamedTuple):
    """物理坐标（毫米）"""

    x: float
    y: float
    z: float


@dataclass(frozen=True, eq=False)
class Affine4:
    """体素 -> 物理坐标的 4x4 齐次变换（构造后不可变）"""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"仿射矩阵必须是 4x4，实际为 {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("仿射矩阵包含非有限值")
        if not np.array_equal(m[3], _BOTTOM_ROW):
            raise ValueError(f"仿射矩阵最后一行必须是 (0,0,0,1)，实际为 {m[3].tolist()}")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @classmethod
    def from_matvec(cls, matrix: Sequence[Sequence[float]], vector: Sequence[float] = (0.0, 0.0, 0.0)) -> "Affine4":
        m = np.eye(4)
        m[:3, :3] = np.asarray(matrix, dtype=np.float64)
        m[:3, 3] = np.asarray(vector, dtype=np.float64)
        return cls(m)

    @property
    def linear(self) -> np.ndarray:
        return self.m[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.m[:3, 3]

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.linear))

    @property
    def is_invertible(self) -> bool:
        return abs(self.det) > DET_EPS

    def __call__(self, points) -> np.ndarray:
        """对单点 (3,) 或点集 (..., 3) 做变换"""
        return apply_affine(self.m, np.asarray(points, dtype=np.float64))

    def allclose(self, other: "Affine4", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.m, other.m, rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        return f"Affine4({self.m.tolist()})"


def identity() -> Affine4:
    return Affine4(np.eye(4))


def translation(t: Sequence[float]) -> Affine4:
    return Affine4.from_matvec(np.eye(3), t)


def compose(a: Affine4, b: Affine4) -> Affine4:
    """compose(a, b)(p) == a(b(p))"""
    m = a.m @ b.m
    m[3] = _BOTTOM_ROW
    return Affine4(m)


def invert(a: Affine4) -> Affine4:
    if not a.is_invertible:
        raise SingularAffine(f"仿射矩阵不可逆: |det|={abs(a.det):.3g}")
    m = np.linalg.inv(a.m)
    m[3] = _BOTTOM_ROW
    return Affine4(m)


def voxel_to_world(p: Sequence[float], g) -> PhysicalPoint:
    """
    连续体素坐标 -> 物理坐标

    Args:
        p: 连续体素坐标，可以在网格范围之外
        g: VoxelGrid

    Returns:
        PhysicalPoint（毫米）
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise ValueError(f"体素坐标必须是 3 个有限实数: {p}")
    x, y, z = g.affine(p)
    return PhysicalPoint(float(x), float(y), float(z))


def world_to_voxel(q: Sequence[float], g) -> np.ndarray:
    """物理坐标 -> 连续体素坐标；网格仿射奇异时抛出 SingularAffine"""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (3,) or not np.all(np.isfinite(q)):
        raise ValueError(f"物理坐标必须是 3 个有限实数: {q}")
    return g.inverse(q)


def voxels_to_world(points, g) -> np.ndarray:
    return g.affine(points)


def world_to_voxels(points, g) -> np.ndarray:
    return g.inverse(points)
