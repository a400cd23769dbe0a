import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from core.errors import SingularAffine
from geom import (
    Affine4,
    IntensityVolume,
    LabelVolume,
    VoxelGrid,
    compose,
    identity,
    invert,
    translation,
    voxel_to_world,
    voxels_to_world,
    world_to_voxel,
    world_to_voxels,
)


def random_affine(rng: np.random.Generator) -> Affine4:
    """随机的良态仿射：旋转 × 间距 + 平移"""
    rotation = Rotation.random(random_state=int(rng.integers(1 << 31))).as_matrix()
    spacing = rng.uniform(0.5, 3.0, size=3)
    return Affine4.from_matvec(rotation * spacing, rng.uniform(-150, 150, size=3))


def scanner_grid() -> VoxelGrid:
    m = np.diag([1.25, 1.25, 10.0, 1.0])
    m[:3, 3] = (-100.0, -100.0, -50.0)
    return VoxelGrid((96, 96, 12), Affine4(m))


def test_affine_rejects_bad_matrices():
    with pytest.raises(ValueError):
        Affine4(np.eye(3))
    bad_row = np.eye(4)
    bad_row[3, 0] = 1e-12
    with pytest.raises(ValueError):
        Affine4(bad_row)
    not_finite = np.eye(4)
    not_finite[0, 3] = np.nan
    with pytest.raises(ValueError):
        Affine4(not_finite)


def test_affine_is_read_only():
    a = identity()
    with pytest.raises(ValueError):
        a.m[0, 0] = 2.0


def test_voxel_to_world_examples():
    g = VoxelGrid((10, 10, 10), identity())
    assert voxel_to_world((2, 3, 4), g) == (2.0, 3.0, 4.0)
    assert np.allclose(world_to_voxel((5, 5, 5), g), (5, 5, 5))

    g = scanner_grid()
    assert voxel_to_world((0, 0, 0), g) == pytest.approx((-100.0, -100.0, -50.0))
    assert voxel_to_world((1, 0, 0), g) == pytest.approx((-98.75, -100.0, -50.0))
    # 网格范围外的连续坐标同样有效
    assert voxel_to_world((-0.5, 200.0, 3.5), g) == pytest.approx((-100.625, 150.0, -15.0))


def test_voxel_to_world_rejects_non_finite():
    with pytest.raises(ValueError):
        voxel_to_world((0.0, np.inf, 0.0), scanner_grid())
    with pytest.raises(ValueError):
        world_to_voxel((0.0, 0.0), scanner_grid())


def test_round_trip_random_points():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10):
        g = VoxelGrid((64, 64, 16), random_affine(rng))
        points = rng.uniform(-50, 150, size=(1000, 3))
        back = world_to_voxels(voxels_to_world(points, g), g)
        worst = max(worst, float(np.abs(back - points).max()))
    assert worst < 1e-6


def test_singular_affine_raises_on_inversion():
    # 第三列为 0：退化的 2D 头信息
    m = np.diag([1.0, 1.0, 0.0, 1.0])
    g = VoxelGrid((8, 8, 1), Affine4(m))
    assert voxel_to_world((1, 1, 0), g) == (1.0, 1.0, 0.0)
    with pytest.raises(SingularAffine):
        world_to_voxel((1.0, 1.0, 0.0), g)
    with pytest.raises(SingularAffine):
        invert(g.affine)


def test_compose_and_invert():
    rng = np.random.default_rng(3)
    a, b, c = (random_affine(rng) for _ in range(3))
    assert compose(a, invert(a)).allclose(identity())
    assert invert(invert(a)).allclose(a)
    assert compose(translation((1, 0, 0)), translation((0, 2, 0))).allclose(translation((1, 2, 0)))

    p = rng.uniform(-20, 20, size=(50, 3))
    assert np.abs(compose(a, b)(p) - a(b(p))).max() < 1e-9
    assert np.abs(compose(compose(a, b), c)(p) - compose(a, compose(b, c))(p)).max() < 1e-9


def test_grid_spacing_and_normal():
    rng = np.random.default_rng(11)
    affine = random_affine(rng)
    g = VoxelGrid((4, 5, 6), affine)
    assert g.spacing == pytest.approx(tuple(np.linalg.norm(affine.linear, axis=0)), abs=1e-9)
    normal = g.slice_normal()
    assert np.linalg.norm(normal) == pytest.approx(1.0)
    assert abs(np.dot(normal, affine.linear[:, 0])) < 1e-9
    assert g.n_voxels == 120
    assert not g.is_single_slice


def test_grid_rejects_bad_dims():
    with pytest.raises(ValueError):
        VoxelGrid((0, 4, 4), identity())
    with pytest.raises(ValueError):
        VoxelGrid((4, 4), identity())


def test_index_grid_matches_data_order():
    g = VoxelGrid((2, 3, 4), identity())
    idx = g.index_grid()
    data = np.arange(24).reshape(2, 3, 4)
    assert idx.shape == (24, 3)
    i, j, k = idx[17]
    assert data[i, j, k] == 17


def test_label_volume_invariants():
    g = VoxelGrid((2, 2, 1), identity())
    v = LabelVolume(g, np.array([[[0], [1]], [[2], [0]]]))
    assert v.data.dtype == np.uint8
    assert v.mask(2).sum() == 1
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1
    with pytest.raises(ValueError):
        LabelVolume(g, np.full((2, 2, 1), 3))
    with pytest.raises(ValueError):
        LabelVolume(g, np.zeros((2, 2, 2)))


@pytest.mark.parametrize("values", [
    np.array([258, 0], dtype=np.int32),
    np.array([-254, 0], dtype=np.int32),
    np.array([1.7, 0.0]),
    np.array([np.nan, 0.0]),
    np.array([-1, 1], dtype=np.int8),
])
def test_label_volume_rejects_values_before_cast(values):
    g = VoxelGrid((2, 1, 1), identity())
    with pytest.raises(ValueError):
        LabelVolume(g, values.reshape(2, 1, 1))


def test_label_volume_accepts_integral_inputs():
    g = VoxelGrid((3, 1, 1), identity())
    for values in (np.array([0.0, 1.0, 2.0]), np.array([0, 1, 2], dtype=np.int64), np.array([True, False, True])):
        v = LabelVolume(g, values.reshape(3, 1, 1))
        assert v.data.dtype == np.uint8
        assert v.data.ravel().tolist() == [int(x) for x in values]


def test_intensity_volume_invariants():
    g = VoxelGrid((2, 1, 1), identity())
    v = IntensityVolume(g, np.array([[[1.5]], [[2.5]]], dtype=np.float32))
    assert v.data.dtype == np.float32
    with pytest.raises(ValueError):
        IntensityVolume(g, np.array([[[np.nan]], [[0.0]]]))
