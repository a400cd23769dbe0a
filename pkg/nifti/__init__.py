from .nifti_io import (
    LabelLayout,
    NiftiHeader,
    affine_source,
    read_frames,
    read_volume,
    resolve_affine,
    write_volume,
)

__all__ = [
    "LabelLayout",
    "NiftiHeader",
    "affine_source",
    "read_frames",
    "read_volume",
    "resolve_affine",
    "write_volume",
]
