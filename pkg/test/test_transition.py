import numpy as np
import pytest

from core.errors import ManifestError, NoOverlap, RoiOutOfBounds, ShapeMismatch, SingularAffine
from geom import LV, RV, Affine4, IntensityVolume, LabelVolume, VoxelGrid, identity, translation
from phantom import default_la_grid, default_sa_grid, labels_at, random_spec, sample_grid
from transition import (
    RoiSpec,
    TransitionParams,
    crop_to_roi,
    derive_roi,
    embed_from_roi,
    la_prior_on_sa,
    mask_non_rv,
    transform_label,
)


def unit_grid(dims) -> VoxelGrid:
    return VoxelGrid(dims, identity())


def params(**kwargs) -> TransitionParams:
    values = {"slab_halfwidth_mm": 4.0, "slice_rv_threshold_vox": 1, "margin_mm": 0.0}
    values.update(kwargs)
    return TransitionParams(**values)


def random_labels(rng, dims) -> np.ndarray:
    return rng.integers(0, 3, size=dims).astype(np.uint8)


def brute_force_bbox(data: np.ndarray):
    coords = np.argwhere(data > 0)
    return tuple((int(lo), int(hi)) for lo, hi in zip(coords.min(axis=0), coords.max(axis=0)))


def test_identical_grids_are_identity():
    rng = np.random.default_rng(0)
    grid = VoxelGrid((7, 6, 5), Affine4(np.diag([1.5, 1.5, 6.0, 1.0])))
    src = LabelVolume(grid, random_labels(rng, grid.dims))
    out = transform_label(src, grid, params())
    assert np.array_equal(out.data, src.data)


def test_identical_single_slice_grids_are_identity():
    rng = np.random.default_rng(1)
    grid = VoxelGrid((9, 8, 1), Affine4(np.diag([1.25, 1.25, 8.0, 1.0])))
    src = LabelVolume(grid, random_labels(rng, grid.dims))
    out = transform_label(src, grid, params())
    assert np.array_equal(out.data, src.data)


def test_shift_by_one_voxel():
    rng = np.random.default_rng(2)
    src = LabelVolume(unit_grid((6, 5, 4)), random_labels(rng, (6, 5, 4)))
    dst_grid = VoxelGrid((6, 5, 4), translation((1.0, 0.0, 0.0)))
    out = transform_label(src, dst_grid, params())
    assert np.array_equal(out.data[:-1], src.data[1:])
    assert not out.data[-1].any()


def test_half_voxel_ties_round_up():
    src_data = np.zeros((4, 1, 1), dtype=np.uint8)
    src_data[2] = RV
    src = LabelVolume(VoxelGrid((4, 1, 1), identity()), src_data)
    # 目标体素 0 落在源坐标 1.5，四舍五入到 2
    dst_grid = VoxelGrid((1, 1, 1), translation((1.5, 0.0, 0.0)))
    assert transform_label(src, dst_grid, params()).data[0, 0, 0] == RV


def test_out_of_extent_is_background():
    src = LabelVolume(unit_grid((3, 3, 3)), np.full((3, 3, 3), LV))
    far = VoxelGrid((3, 3, 3), translation((10.0, 0.0, 0.0)))
    assert not transform_label(src, far, params()).data.any()
    # ±0.5 体素以内仍算在范围内
    edge = VoxelGrid((1, 1, 1), translation((2.49, 0.0, 0.0)))
    assert transform_label(src, edge, params()).data[0, 0, 0] == LV


def test_singular_affines():
    flat = VoxelGrid((3, 3, 1), Affine4(np.diag([1.0, 1.0, 0.0, 1.0])))
    src = LabelVolume(flat, np.ones((3, 3, 1)))
    with pytest.raises(SingularAffine):
        transform_label(src, unit_grid((3, 3, 3)), params())
    ok = LabelVolume(unit_grid((3, 3, 3)), np.ones((3, 3, 3)))
    with pytest.raises(SingularAffine):
        transform_label(ok, flat, params())


def test_single_slice_source_gives_slab():
    # LA 平面 z = 0，像素 1 mm；SA 体沿 z 方向 1 mm 一层
    la_grid = VoxelGrid((10, 10, 1), Affine4(np.diag([1.0, 1.0, 6.0, 1.0])))
    la = LabelVolume(la_grid, np.full((10, 10, 1), RV))
    sa_grid = VoxelGrid((10, 10, 21), translation((0.0, 0.0, -10.0)))
    out = transform_label(la, sa_grid, params(slab_halfwidth_mm=2.0))
    per_slice = out.mask(RV).sum(axis=(0, 1))
    assert per_slice.tolist() == [0] * 8 + [100] * 5 + [0] * 8


def phantom_case(seed=3):
    spec = random_spec(seed)
    sa_grid = default_sa_grid(spec)
    la_grid = default_la_grid(spec)
    return spec, sa_grid, la_grid, sample_grid(spec, la_grid)


def test_phantom_transition_matches_analytic_sampling():
    spec, sa_grid, la_grid, la = phantom_case()
    p = params(slab_halfwidth_mm=la_grid.spacing[2] / 2.0)
    out = transform_label(la, sa_grid, p)

    world = sa_grid.voxel_centers_world()
    normal = la_grid.slice_normal()
    signed = (world - la_grid.affine.translation) @ normal
    in_slab = np.abs(signed) <= p.slab_halfwidth_mm
    assert in_slab.sum() == 96 * 7 * 12

    got = out.data.reshape(-1)
    # 平面上的投影点：与 LA 像素中心重合，结果应完全一致
    projected = labels_at(spec, world[in_slab] - signed[in_slab, None] * normal)
    assert np.mean(got[in_slab] == projected) >= 0.999

    # 直接在 SA 体素中心解析采样
    direct = labels_at(spec, world[in_slab])
    agree = got[in_slab] == direct
    assert agree.mean() >= 0.99
    assert not got[~in_slab].any()

    # 不一致的体素与平面上同一 (i, k) 的体素标签不同，即两者之间有标签边界
    truth = sample_grid(spec, sa_grid).data
    j_plane = sa_grid.dims[1] // 2
    for i, j, k in sa_grid.index_grid()[in_slab][~agree]:
        assert truth[i, j, k] != truth[i, j_plane, k]


def test_phantom_on_plane_voxels_match_la_pixels():
    spec, sa_grid, la_grid, la = phantom_case(5)
    sa_truth = sample_grid(spec, sa_grid).data
    j_plane = sa_grid.dims[1] // 2
    # SA 第 k 层与 LA 第 8k+3 行重合
    for k in range(sa_grid.dims[2]):
        assert np.array_equal(sa_truth[:, j_plane, k], la.data[:, 8 * k + 3, 0])


def test_phantom_sa_to_la_to_sa_keeps_surviving_voxels():
    spec, sa_grid, la_grid, _ = phantom_case(6)
    sa = sample_grid(spec, sa_grid)
    p = params(slab_halfwidth_mm=la_grid.spacing[2] / 2.0)

    on_la = transform_label(sa, la_grid, p)
    back = transform_label(on_la, sa_grid, p)

    j_plane = sa_grid.dims[1] // 2
    for k in range(sa_grid.dims[2]):
        assert np.array_equal(on_la.data[:, 8 * k + 3, 0], sa.data[:, j_plane, k])
    # 平面上的 SA 体素原样迁回
    assert np.array_equal(back.data[:, j_plane, :], sa.data[:, j_plane, :])
    # 薄板内其余体素取同一 (i, k) 平面体素的标签，薄板外为 0
    for j in range(sa_grid.dims[1]):
        if abs(j - j_plane) <= 3:
            assert np.array_equal(back.data[:, j, :], sa.data[:, j_plane, :])
        else:
            assert not back.data[:, j, :].any()


def test_derive_roi_examples():
    grid = unit_grid((10, 10, 10))
    with pytest.raises(NoOverlap):
        derive_roi(LabelVolume(grid, np.zeros((10, 10, 10))), params())

    data = np.zeros((10, 10, 10), dtype=np.uint8)
    data[5, 6, 7] = RV
    roi = derive_roi(LabelVolume(grid, data), params())
    assert roi.bbox == ((5, 5), (6, 6), (7, 7))
    assert roi.rv_slice_range == (7, 7)

    data = np.zeros((10, 10, 10), dtype=np.uint8)
    data[2:5, 3:10, 1:7] = RV
    roi = derive_roi(LabelVolume(grid, data), params(margin_mm=1.0))
    assert roi.bbox == ((1, 5), (2, 9), (0, 7))
    assert roi.rv_slice_range == (1, 6)


def test_derive_roi_margin_in_voxels():
    grid = VoxelGrid((40, 40, 12), Affine4(np.diag([1.25, 1.25, 10.0, 1.0])))
    data = np.zeros(grid.dims, dtype=np.uint8)
    data[15:20, 12:30, 3:8] = RV
    roi = derive_roi(LabelVolume(grid, data), params(margin_mm=10.0))
    # ceil(10 / 1.25) = 8 体素，ceil(10 / 10) = 1 层
    assert roi.bbox == ((7, 27), (4, 37), (2, 8))


def test_derive_roi_slice_range_uses_rv_only():
    grid = unit_grid((8, 8, 10))
    data = np.zeros(grid.dims, dtype=np.uint8)
    data[1:3, 1:3, 0:10] = LV
    data[4:6, 4:6, 3:6] = RV
    roi = derive_roi(LabelVolume(grid, data), params(margin_mm=1.0))
    assert roi.rv_slice_range == (3, 5)
    # k 范围裁到外扩后的 RV 层范围
    assert roi.bbox[2] == (2, 6)
    assert roi.bbox[0] == (0, 6)


def test_derive_roi_threshold_and_fallback():
    grid = unit_grid((8, 8, 6))
    data = np.zeros(grid.dims, dtype=np.uint8)
    data[0:3, 0:3, 1] = RV
    data[0, 0, 4] = RV
    roi = derive_roi(LabelVolume(grid, data), params(slice_rv_threshold_vox=2))
    assert roi.rv_slice_range == (1, 1)

    lv_only = np.zeros(grid.dims, dtype=np.uint8)
    lv_only[2, 2, 2:5] = LV
    roi = derive_roi(LabelVolume(grid, lv_only), params())
    assert roi.rv_slice_range == (2, 4)


def test_derive_roi_matches_brute_force_on_random_volumes():
    rng = np.random.default_rng(42)
    for _ in range(200):
        dims = tuple(int(d) for d in rng.integers(1, 33, size=3))
        data = np.zeros(dims, dtype=np.uint8)
        n = int(rng.integers(1, 20))
        idx = tuple(rng.integers(0, d, size=n) for d in dims)
        # 全部为 RV 时 k 范围就是全部标签的范围
        data[idx] = RV
        roi = derive_roi(LabelVolume(unit_grid(dims), data), params())
        assert roi.bbox == brute_force_bbox(data)


def test_crop_preserves_world_coordinates():
    rng = np.random.default_rng(5)
    grid = VoxelGrid((12, 10, 8), Affine4.from_matvec(np.diag([1.25, 1.25, 10.0]) @ np.eye(3), (3.0, -7.0, 11.0)))
    data = rng.normal(size=grid.dims)
    volume = IntensityVolume(grid, data)
    roi = RoiSpec(bbox=((2, 9), (1, 4), (3, 7)), rv_slice_range=(4, 6), margin_mm=0.0)
    cropped = crop_to_roi(volume, roi)

    assert isinstance(cropped, IntensityVolume)
    assert cropped.dims == (8, 4, 5)
    assert np.array_equal(cropped.data, data[2:10, 1:5, 3:8])
    assert np.allclose(cropped.grid.affine((0, 0, 0)), grid.affine((2, 1, 3)), atol=1e-9)
    idx = cropped.grid.index_grid()
    assert np.abs(cropped.grid.affine(idx) - grid.affine(idx + np.array(roi.lower))).max() < 1e-9


def test_full_grid_crop_and_embed_are_identity():
    rng = np.random.default_rng(6)
    grid = unit_grid((5, 4, 3))
    labels = LabelVolume(grid, random_labels(rng, grid.dims))
    roi = RoiSpec(bbox=((0, 4), (0, 3), (0, 2)), rv_slice_range=(0, 2), margin_mm=0.0)
    cropped = crop_to_roi(labels, roi)
    assert np.array_equal(cropped.data, labels.data)
    assert cropped.grid.affine.allclose(grid.affine)
    assert np.array_equal(embed_from_roi(cropped, roi, grid).data, labels.data)


def test_crop_embed_round_trip():
    rng = np.random.default_rng(7)
    grid = unit_grid((9, 8, 7))
    labels = LabelVolume(grid, random_labels(rng, grid.dims))
    roi = RoiSpec(bbox=((1, 5), (2, 7), (0, 3)), rv_slice_range=(1, 2), margin_mm=5.0)
    restored = embed_from_roi(crop_to_roi(labels, roi), roi, grid)
    inside = np.zeros(grid.dims, dtype=bool)
    inside[roi.slices()] = True
    assert np.array_equal(restored.data[inside], labels.data[inside])
    assert not restored.data[~inside].any()


def test_crop_embed_errors():
    grid = unit_grid((4, 4, 4))
    labels = LabelVolume(grid, np.zeros(grid.dims))
    outside = RoiSpec(bbox=((0, 4), (0, 3), (0, 3)), rv_slice_range=(0, 3), margin_mm=0.0)
    with pytest.raises(RoiOutOfBounds):
        crop_to_roi(labels, outside)
    roi = RoiSpec(bbox=((0, 1), (0, 1), (0, 1)), rv_slice_range=(0, 1), margin_mm=0.0)
    with pytest.raises(ShapeMismatch):
        embed_from_roi(labels, roi, grid)


def test_mask_non_rv():
    grid = unit_grid((4, 4, 10))
    data = np.zeros(grid.dims, dtype=np.uint8)
    data[0:2] = RV
    data[2:4] = LV
    prediction = LabelVolume(grid, data)
    roi = RoiSpec(bbox=((0, 3), (0, 3), (0, 9)), rv_slice_range=(3, 7), margin_mm=0.0)
    masked = mask_non_rv(prediction, roi)

    rv_slices = np.flatnonzero(masked.mask(RV).any(axis=(0, 1)))
    assert rv_slices.tolist() == [3, 4, 5, 6, 7]
    assert np.array_equal(masked.mask(LV), prediction.mask(LV))
    assert masked.mask(RV).sum() <= prediction.mask(RV).sum()

    everything = RoiSpec(bbox=((0, 3), (0, 3), (0, 9)), rv_slice_range=(0, 9), margin_mm=0.0)
    assert np.array_equal(mask_non_rv(prediction, everything).data, data)


def test_la_prior_on_sa_phantom_roi():
    spec, sa_grid, la_grid, la = phantom_case(8)
    p = params(slab_halfwidth_mm=4.0, margin_mm=0.0)
    transformed, roi = la_prior_on_sa(la, sa_grid, p)
    assert roi.bbox[:2] == brute_force_bbox(transformed.data)[:2]
    rv_k = np.flatnonzero(transformed.mask(RV).any(axis=(0, 1)))
    assert roi.rv_slice_range == (int(rv_k[0]), int(rv_k[-1]))
    # 不外扩时 k 范围就是 RV 层范围
    assert roi.bbox[2] == roi.rv_slice_range


def test_plane_outside_stack_has_no_overlap():
    spec, sa_grid, la_grid, la = phantom_case(9)
    moved = VoxelGrid(la_grid.dims, Affine4.from_matvec(la_grid.affine.linear,
                                                         la_grid.affine.translation + 500.0 * la_grid.slice_normal()))
    with pytest.raises(NoOverlap):
        la_prior_on_sa(LabelVolume(moved, la.data), sa_grid, params())


def test_transition_params_defaults():
    p = TransitionParams.from_config()
    assert p.margin_mm == 10.0
    assert p.slice_rv_threshold_vox == 1
    assert p.slab_halfwidth_mm == 5.0
    with pytest.raises(ValueError):
        TransitionParams(slab_halfwidth_mm=0.0)


def test_roi_json_round_trip_shape():
    roi = RoiSpec(bbox=((1, 5), (2, 9), (0, 7)), rv_slice_range=(1, 6), margin_mm=10.0)
    data = roi.to_json_dict()
    assert data == {"bbox": [1, 5, 2, 9, 0, 7], "rv_slices": [1, 6], "margin_mm": 10.0}
    assert RoiSpec.from_json_dict(data) == roi
    with pytest.raises(ValueError):
        RoiSpec(bbox=((1, 5), (2, 9), (3, 7)), rv_slice_range=(1, 6), margin_mm=0.0)


@pytest.mark.parametrize("data", [
    {"rv_slices": [0, 1]},
    {"bbox": [1, 5, 2, 9], "rv_slices": [1, 6]},
    {"bbox": [1, 5, 2, 9, 0, 7], "rv_slices": None},
    {"bbox": [1, 5, 2, 9, 0, "x"], "rv_slices": [1, 6]},
    {"bbox": [5, 1, 2, 9, 0, 7], "rv_slices": [1, 6]},
])
def test_roi_json_malformed(data):
    with pytest.raises(ManifestError):
        RoiSpec.from_json_dict(data)
