from .models import RoiSpec, TransitionParams
from .transition import (
    crop_to_roi,
    derive_roi,
    embed_from_roi,
    la_prior_on_sa,
    mask_non_rv,
    transform_label,
)

__all__ = [
    "RoiSpec",
    "TransitionParams",
    "crop_to_roi",
    "derive_roi",
    "embed_from_roi",
    "la_prior_on_sa",
    "mask_non_rv",
    "transform_label",
]
