# coding=utf-8
"""
LA / SA 信息迁移

1 transform_label: 标签在两个视图的坐标系之间迁移，x_dst -> T_src^-1(T_dst(x_dst))，最近邻取值
2 derive_roi: 由迁移到 SA 网格的 LA 标签推导 ROI（包围盒 + RV 层范围）
3 crop_to_roi / embed_from_roi: 裁剪与回填，物理坐标保持不变
4 mask_non_rv: 后处理，去掉 RV 层范围之外的 RV 预测
"""

from __future__ import annotations

import math
from typing import Tuple, TypeVar

import numpy as np
from structlog import get_logger

from core.errors import NoOverlap, RoiOutOfBounds, ShapeMismatch, SingularAffine
from geom.affine import compose, translation
from geom.models import RV, IntensityVolume, LabelVolume, VoxelGrid

from .models import RoiSpec, TransitionParams

logger = get_logger()

V = TypeVar("V", IntensityVolume, LabelVolume)


def _nearest_index(coords: np.ndarray) -> np.ndarray:
    # 半体素处向上取整（round-half-up），结果与平台无关
    return np.floor(coords + 0.5).astype(np.int64)


def transform_label(src: LabelVolume, dst_grid: VoxelGrid, params: TransitionParams) -> LabelVolume:
    """
    把 src 标签迁移到 dst_grid 上

    对每个目标体素中心：目标仿射 -> 物理坐标 -> 源仿射逆 -> 源连续索引，落在源网格范围内
    （每轴 ±0.5 体素）时取最近邻标签，否则为 0。源是单层 LA 图像时，穿层方向改用
    “到 LA 平面的距离 <= slab_halfwidth_mm” 判断，迁移结果是一个薄板。
    """
    if not dst_grid.affine.is_invertible:
        raise SingularAffine("目标网格仿射不可逆")
    src_grid = src.grid
    src_inverse = src_grid.inverse
    nx, ny, nz = src_grid.dims
    idx = dst_grid.index_grid()

    if src_grid.is_single_slice:
        world = dst_grid.affine(idx)
        normal = src_grid.slice_normal()
        signed = (world - src_grid.affine.translation) @ normal
        # 投影到 LA 平面后再找最近像素
        coords = src_inverse(world - signed[:, None] * normal)
        nearest = _nearest_index(coords)
        nearest[:, 2] = 0
        inside = np.abs(signed) <= params.slab_halfwidth_mm
    else:
        mapping = compose(src_inverse, dst_grid.affine)
        nearest = _nearest_index(mapping(idx))
        inside = (nearest[:, 2] >= 0) & (nearest[:, 2] < nz)

    inside &= (nearest[:, 0] >= 0) & (nearest[:, 0] < nx)
    inside &= (nearest[:, 1] >= 0) & (nearest[:, 1] < ny)

    out = np.zeros(idx.shape[0], dtype=np.uint8)
    hit = nearest[inside]
    out[inside] = src.data[hit[:, 0], hit[:, 1], hit[:, 2]]
    return LabelVolume(dst_grid, out.reshape(dst_grid.dims))


def _margin_voxels(margin_mm: float, spacing: float) -> int:
    if margin_mm <= 0:
        return 0
    return int(math.ceil(margin_mm / spacing - 1e-9))


def derive_roi(transformed_la: LabelVolume, params: TransitionParams) -> RoiSpec:
    """
    由 SA 网格上的迁移 LA 标签推导 ROI

    - 包围盒：LV ∪ RV 全部非零标签的最小包围盒，每轴外扩 ceil(margin_mm / spacing) 并裁到网格内
    - RV 层范围：RV 体素数 >= slice_rv_threshold_vox 的 SA 层的最小/最大 k
    - 包围盒的 k 范围再与外扩后的 RV 层范围取交集
    """
    data = transformed_la.data
    dims = transformed_la.dims
    labelled = data > 0
    if not labelled.any():
        raise NoOverlap("迁移后的 LA 标签全为背景，LA 平面与 SA 体没有交集")

    rv_counts = (data == RV).sum(axis=(0, 1))
    rv_slices = np.flatnonzero(rv_counts >= params.slice_rv_threshold_vox)
    if rv_slices.size == 0:
        logger.warning("迁移后的 LA 标签中没有 RV 层，RV 层范围退化为全部有标签的层",
                       threshold=params.slice_rv_threshold_vox)
        rv_slices = np.flatnonzero(labelled.any(axis=(0, 1)))
    k_low, k_high = int(rv_slices[0]), int(rv_slices[-1])

    margins = [_margin_voxels(params.margin_mm, s) for s in transformed_la.grid.spacing]
    bbox = []
    for axis, positions in enumerate(np.nonzero(labelled)):
        lo = max(0, int(positions.min()) - margins[axis])
        hi = min(dims[axis] - 1, int(positions.max()) + margins[axis])
        bbox.append((lo, hi))

    k0 = max(bbox[2][0], k_low - margins[2])
    k1 = min(bbox[2][1], k_high + margins[2])
    bbox[2] = (k0, k1)

    return RoiSpec(bbox=tuple(bbox), rv_slice_range=(k_low, k_high), margin_mm=params.margin_mm)


def la_prior_on_sa(la_label: LabelVolume, sa_grid: VoxelGrid, params: TransitionParams) -> Tuple[LabelVolume, RoiSpec]:
    """LA 分割迁移到 SA 网格并推导 ROI"""
    transformed = transform_label(la_label, sa_grid, params)
    return transformed, derive_roi(transformed, params)


def crop_to_roi(v: V, roi: RoiSpec) -> V:
    """
    按 ROI 裁剪；输出仿射 = 输入仿射 ∘ 平移(i0, j0, k0)，对应体素的物理坐标不变
    """
    if not v.grid.contains_index(roi.lower, roi.upper):
        raise RoiOutOfBounds(f"ROI {roi.bbox} 超出网格 {v.grid.dims}")
    data = v.data[roi.slices()]
    grid = VoxelGrid(data.shape, compose(v.grid.affine, translation(roi.lower)))
    return type(v)(grid, data)


def embed_from_roi(cropped: LabelVolume, roi: RoiSpec, full_grid: VoxelGrid) -> LabelVolume:
    """crop_to_roi 的逆：ROI 内回填裁剪结果，ROI 外为 0"""
    if tuple(cropped.dims) != roi.shape:
        raise ShapeMismatch(f"裁剪体尺寸 {cropped.dims} 与 ROI 尺寸 {roi.shape} 不一致")
    if not full_grid.contains_index(roi.lower, roi.upper):
        raise RoiOutOfBounds(f"ROI {roi.bbox} 超出网格 {full_grid.dims}")
    out = np.zeros(full_grid.dims, dtype=np.uint8)
    out[roi.slices()] = cropped.data
    return LabelVolume(full_grid, out)


def mask_non_rv(sa_prediction: LabelVolume, roi: RoiSpec) -> LabelVolume:
    """RV 层范围之外的 RV 标签置 0，其余体素不变"""
    data = sa_prediction.data.copy()
    k_low, k_high = roi.rv_slice_range
    outside = np.ones(data.shape[2], dtype=bool)
    outside[max(0, k_low):k_high + 1] = False
    block = data[:, :, outside]
    block[block == RV] = 0
    data[:, :, outside] = block
    return sa_prediction.with_data(data)
