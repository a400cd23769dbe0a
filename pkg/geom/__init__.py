from .affine import (
    Affine4,
    PhysicalPoint,
    compose,
    identity,
    invert,
    translation,
    voxel_to_world,
    voxels_to_world,
    world_to_voxel,
    world_to_voxels,
)
from .models import BACKGROUND, LV, RV, IntensityVolume, LabelVolume, VoxelGrid

__all__ = [
    "Affine4",
    "PhysicalPoint",
    "VoxelGrid",
    "LabelVolume",
    "IntensityVolume",
    "BACKGROUND",
    "LV",
    "RV",
    "compose",
    "identity",
    "invert",
    "translation",
    "voxel_to_world",
    "voxels_to_world",
    "world_to_voxel",
    "world_to_voxels",
]
