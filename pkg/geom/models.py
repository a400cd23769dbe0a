# coding=utf-8
"""
几何数据模型

定义体素网格、标签体、强度体的数据结构。所有对象构造后不可变，
数据数组按 (nx, ny, nz) 排列，data[i, j, k] 对应体素索引 (i, j, k)。
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np
from nibabel.affines import voxel_sizes

from .affine import Affine4, invert

# 内部标签：0 背景，1 LV（腔 + 心肌合并），2 RV
BACKGROUND = 0
LV = 1
RV = 2
LABEL_VALUES = (BACKGROUND, LV, RV)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """体素网格：尺寸 + 仿射"""

    dims: Tuple[int, int, int]
    affine: Affine4

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"网格尺寸必须是 3 个正整数: {self.dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def spacing(self) -> Tuple[float, float, float]:
        """体素间距（毫米），即仿射前三列的欧氏范数"""
        return tuple(float(s) for s in voxel_sizes(self.affine.m))

    @property
    def is_single_slice(self) -> bool:
        return self.dims[2] == 1

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    @cached_property
    def inverse(self) -> Affine4:
        return invert(self.affine)

    def index_grid(self) -> np.ndarray:
        """全部体素索引 (N, 3)，顺序与 data.reshape(-1) 一致"""
        return np.indices(self.dims).reshape(3, -1).T

    def voxel_centers_world(self) -> np.ndarray:
        return self.affine(self.index_grid())

    def slice_normal(self) -> np.ndarray:
        """i/j 平面的单位法向量"""
        n = np.cross(self.affine.linear[:, 0], self.affine.linear[:, 1])
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("网格的前两列共线，无法确定层面法向")
        return n / norm

    def contains_index(self, lo, hi) -> bool:
        return all(0 <= a <= b < n for a, b, n in zip(lo, hi, self.dims))


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """标签体：0 背景 / 1 LV / 2 RV"""

    grid: VoxelGrid
    data: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.dtype.kind not in "buif":
            raise ValueError(f"标签数据必须是数值类型，实际为 {raw.dtype}")
        if raw.shape != self.grid.dims:
            raise ValueError(f"标签数据尺寸 {raw.shape} 与网格 {self.grid.dims} 不一致")
        # 先在原始数值上检查，再转 uint8
        invalid = ~np.isin(raw, LABEL_VALUES)
        if invalid.any():
            bad = sorted(set(np.unique(raw[invalid]).tolist()))
            raise ValueError(f"标签取值必须在 {LABEL_VALUES} 内，发现 {bad}")
        data = raw.astype(np.uint8)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.grid.dims

    def mask(self, label: int) -> np.ndarray:
        return self.data == label

    def with_data(self, data: np.ndarray) -> "LabelVolume":
        return LabelVolume(self.grid, data)


@dataclass(frozen=True, eq=False)
class IntensityVolume:
    """强度体（MR 信号值），保留原始数值类型"""

    grid: VoxelGrid
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data)
        if data.dtype.kind not in "uif":
            raise ValueError(f"强度数据必须是实数类型，实际为 {data.dtype}")
        if data.shape != self.grid.dims:
            raise ValueError(f"强度数据尺寸 {data.shape} 与网格 {self.grid.dims} 不一致")
        if data.dtype.kind == "f" and not np.all(np.isfinite(data)):
            raise ValueError("强度数据包含非有限值")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.grid.dims

    def with_data(self, data: np.ndarray) -> "IntensityVolume":
        return IntensityVolume(self.grid, data)
