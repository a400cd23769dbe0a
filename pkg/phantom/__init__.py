from .phantom import (
    Ellipsoid,
    PhantomSpec,
    default_la_grid,
    default_sa_grid,
    end_systole,
    intensity_from_labels,
    label_at,
    labels_at,
    random_spec,
    sample_grid,
)

__all__ = [
    "Ellipsoid",
    "PhantomSpec",
    "default_la_grid",
    "default_sa_grid",
    "end_systole",
    "intensity_from_labels",
    "label_at",
    "labels_at",
    "random_spec",
    "sample_grid",
]
