# coding=utf-8
"""
解析心脏体模

LV、RV 各用一个椭球表示，标签由闭式判断给出，在任意朝向的 SA 体和 LA 平面上采样，
作为信息迁移流程的独立参照。

默认几何（随机体模）：
- 列向量 a：LV -> RV 方向（SA 层内）；u：心脏长轴；SA 网格三个轴为 (a, u×a, u)
- LA 平面由 a 和 u 张成并经过 LV 中心，近似四腔心切面，与 SA 层面约成 90°
- LA 像素中心与 SA 体素中心在该平面上的投影重合（SA 层间距是 LA 像素间距的整数倍时）
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from scipy.spatial.transform import Rotation

from core.errors import InputError, IoFailure
from core.yaml_utils import get_phantom_defaults
from geom.affine import Affine4, PhysicalPoint
from geom.models import BACKGROUND, LV, RV, IntensityVolume, LabelVolume, VoxelGrid

# 椭球表面判定容差（归一化坐标）
SURFACE_TOL = 1e-9
ORTHONORMAL_TOL = 1e-9

# 收缩末期相对舒张末期的半轴缩放
ES_SCALE = {"lv": 0.85, "rv": 0.80}

# intensity_from_labels 的分段常数信号值
INTENSITY = {BACKGROUND: 40, LV: 180, RV: 140}

Vec3 = Tuple[float, float, float]


class Ellipsoid(BaseModel):
    """rotation 的列向量是椭球三个主轴在物理坐标中的方向"""

    model_config = ConfigDict(frozen=True)

    center: Vec3
    semi_axes: Tuple[float, float, float]
    rotation: Tuple[Vec3, Vec3, Vec3] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))

    @field_validator("semi_axes")
    @classmethod
    def _positive_axes(cls, v):
        if any(s <= 0 for s in v):
            raise ValueError(f"半轴必须为正: {v}")
        return v

    @field_validator("rotation")
    @classmethod
    def _orthonormal(cls, v):
        r = np.asarray(v, dtype=np.float64)
        if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=ORTHONORMAL_TOL):
            raise ValueError("rotation 必须是正交矩阵")
        return v

    @property
    def rotation_matrix(self) -> np.ndarray:
        return np.asarray(self.rotation, dtype=np.float64)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """点集 (N, 3) 是否在椭球内（含表面）"""
        local = (np.asarray(points, dtype=np.float64) - np.asarray(self.center)) @ self.rotation_matrix
        return np.sum((local / np.asarray(self.semi_axes)) ** 2, axis=-1) <= 1.0 + SURFACE_TOL

    def scaled(self, factor: float) -> "Ellipsoid":
        return self.model_copy(update={"semi_axes": tuple(float(s * factor) for s in self.semi_axes)})

    def moved(self, rotation: np.ndarray, offset: Sequence[float]) -> "Ellipsoid":
        """刚体运动 q -> rotation·q + offset 之后的椭球"""
        rotation = np.asarray(rotation, dtype=np.float64)
        center = rotation @ np.asarray(self.center) + np.asarray(offset, dtype=np.float64)
        axes = rotation @ self.rotation_matrix
        return Ellipsoid(center=_vec(center), semi_axes=self.semi_axes, rotation=_mat(axes))

    @property
    def volume_mm3(self) -> float:
        a, b, c = self.semi_axes
        return 4.0 / 3.0 * np.pi * a * b * c


class PhantomSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    lv: Ellipsoid
    rv: Ellipsoid
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _distinct_centers(self) -> "PhantomSpec":
        if np.allclose(self.lv.center, self.rv.center, rtol=0.0, atol=1e-9):
            raise ValueError("LV 与 RV 的中心不能重合")
        return self

    @classmethod
    def from_json_file(cls, path: Union[str, Path]) -> "PhantomSpec":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except OSError as e:
            raise IoFailure(f"读取体模参数失败 {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise InputError(f"体模参数不是合法 JSON {path}: {e}") from e
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise InputError(f"体模参数格式错误 {path}: {e}") from e

    def moved(self, rotation: np.ndarray, offset: Sequence[float]) -> "PhantomSpec":
        return self.model_copy(update={"lv": self.lv.moved(rotation, offset), "rv": self.rv.moved(rotation, offset)})


def _vec(v) -> Vec3:
    return tuple(float(x) for x in v)


def _mat(m) -> Tuple[Vec3, Vec3, Vec3]:
    return tuple(_vec(row) for row in np.asarray(m))


def labels_at(spec: PhantomSpec, points: np.ndarray) -> np.ndarray:
    """点集的标签：LV 优先，其次 RV，否则背景"""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    labels = np.full(points.shape[0], BACKGROUND, dtype=np.uint8)
    labels[spec.rv.contains(points)] = RV
    labels[spec.lv.contains(points)] = LV
    return labels


def label_at(spec: PhantomSpec, q: Union[PhysicalPoint, Sequence[float]]) -> int:
    return int(labels_at(spec, np.asarray(q, dtype=np.float64)[None, :])[0])


def sample_grid(spec: PhantomSpec, g: VoxelGrid) -> LabelVolume:
    """在网格每个体素中心的物理坐标上求 label_at"""
    labels = labels_at(spec, g.voxel_centers_world())
    return LabelVolume(g, labels.reshape(g.dims))


def random_spec(seed: int) -> PhantomSpec:
    """
    随机体模：长轴方向随机（倾斜），半轴在典型尺寸上抖动 ±10%，RV 位于 LV 一侧

    同一个 seed 总是得到同一个体模。
    """
    rng = np.random.default_rng(seed)
    axes = Rotation.random(random_state=seed).as_matrix()
    a, u = axes[:, 0], axes[:, 2]

    lv_center = rng.uniform(-20.0, 20.0, size=3)
    lv_axes = np.array([25.0, 25.0, 45.0]) * rng.uniform(0.9, 1.1, size=3)
    rv_axes = np.array([20.0, 30.0, 40.0]) * rng.uniform(0.9, 1.1, size=3)
    rv_center = lv_center + 35.0 * rng.uniform(0.95, 1.05) * a - 5.0 * u

    return PhantomSpec(
        lv=Ellipsoid(center=_vec(lv_center), semi_axes=_vec(lv_axes), rotation=_mat(axes)),
        rv=Ellipsoid(center=_vec(rv_center), semi_axes=_vec(rv_axes), rotation=_mat(axes)),
        seed=seed,
    )


def end_systole(spec: PhantomSpec) -> PhantomSpec:
    """收缩末期：中心和朝向不变，半轴收缩"""
    return spec.model_copy(update={"lv": spec.lv.scaled(ES_SCALE["lv"]), "rv": spec.rv.scaled(ES_SCALE["rv"])})


def _frame(spec: PhantomSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # 以 LV 主轴为 SA 坐标系：a 指向 RV 一侧，u 为长轴
    axes = spec.lv.rotation_matrix
    a, u = axes[:, 0], axes[:, 2]
    if np.dot(np.asarray(spec.rv.center) - np.asarray(spec.lv.center), a) < 0:
        a = -a
    return a, np.cross(u, a), u


def _sa_origin(spec: PhantomSpec, dims, spacing) -> np.ndarray:
    a, b, u = _frame(spec)
    nx, ny, nz = dims
    # i 方向向 RV 一侧偏移，j 方向让 LV 中心落在整数行上，k 方向居中
    center = np.asarray(spec.lv.center) + 15.0 * a
    return (center - spacing[0] * (nx - 1) / 2.0 * a
            - spacing[1] * (ny // 2) * b
            - spacing[2] * (nz - 1) / 2.0 * u)


def default_sa_grid(spec: PhantomSpec, dims: Optional[Sequence[int]] = None,
                    spacing: Optional[Sequence[float]] = None) -> VoxelGrid:
    defaults = get_phantom_defaults()["sa"]
    dims = tuple(int(d) for d in (dims or defaults["dims"]))
    spacing = tuple(float(s) for s in (spacing or defaults["spacing"]))
    a, b, u = _frame(spec)
    linear = np.column_stack((a * spacing[0], b * spacing[1], u * spacing[2]))
    return VoxelGrid(dims, Affine4.from_matvec(linear, _sa_origin(spec, dims, spacing)))


def default_la_grid(spec: PhantomSpec, dims: Optional[Sequence[int]] = None,
                    spacing: Optional[Sequence[float]] = None) -> VoxelGrid:
    """
    单层 LA 网格：列向量 (a, u, a×u)，平面经过 LV 中心

    第三个间距是 LA 层厚，写进 NIfTI 后决定迁移时的默认半厚度。
    """
    phantom_defaults = get_phantom_defaults()
    la = phantom_defaults["la"]
    sa = phantom_defaults["sa"]
    dims = tuple(int(d) for d in (dims or la["dims"]))
    spacing = tuple(float(s) for s in (spacing or la["spacing"]))
    sa_dims = tuple(int(d) for d in sa["dims"])
    sa_spacing = tuple(float(s) for s in sa["spacing"])

    a, b, u = _frame(spec)
    sa_origin = _sa_origin(spec, sa_dims, sa_spacing)
    # 与 SA 体素中心对齐：i 方向同原点，长轴方向按 LA 像素间距的整数倍平移
    shift = np.floor((sa_spacing[2] * (sa_dims[2] - 1) - spacing[1] * (dims[1] - 1)) / (2.0 * spacing[1]) + 0.5)
    origin = sa_origin + sa_spacing[1] * (sa_dims[1] // 2) * b + shift * spacing[1] * u
    linear = np.column_stack((a * spacing[0], u * spacing[1], np.cross(a, u) * spacing[2]))
    return VoxelGrid(dims, Affine4.from_matvec(linear, origin))


def intensity_from_labels(volume: LabelVolume) -> IntensityVolume:
    """由标签生成分段常数的 MR 样图像（无噪声），int16"""
    lut = np.zeros(max(INTENSITY) + 1, dtype=np.int16)
    for label, value in INTENSITY.items():
        lut[label] = value
    return IntensityVolume(volume.grid, lut[volume.data])
