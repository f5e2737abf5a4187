"""coembed: coupled spectral embeddings for dense non-rigid shape
correspondence, evaluation, and segmentation."""

__version__ = "0.1.0"

from .coupling import (
    CouplingProblem,
    LossWeights,
    OptimizerConfig,
    cqhb_baseline,
    loss_coupling,
    loss_off,
    loss_off_partial,
    loss_ortho,
    optimize_coupled,
    total_loss,
    total_loss_partial,
)
from .laplacian import cotan_stiffness, lumped_mass, pointcloud_laplacian
from .matching import (
    GeodesicField,
    SegmentLabels,
    kmeans_segment,
    mean_geodesic_error,
    nn_match,
    transfer_segments,
)
from .shape_io import (
    CorrespondenceMap,
    Shape,
    load_correspondence,
    load_shape,
    normalize_unit_ball,
    save_shape,
)
from .spectral import (
    Descriptor,
    SpectralBasis,
    eig_smallest,
    fix_signs,
    gt_indicator_descriptor,
    hks,
    spectral_embedding_nn_baseline,
)

__all__ = [
    "CorrespondenceMap",
    "CouplingProblem",
    "Descriptor",
    "GeodesicField",
    "LossWeights",
    "OptimizerConfig",
    "SegmentLabels",
    "Shape",
    "SpectralBasis",
    "cotan_stiffness",
    "cqhb_baseline",
    "eig_smallest",
    "fix_signs",
    "gt_indicator_descriptor",
    "hks",
    "kmeans_segment",
    "load_correspondence",
    "load_shape",
    "loss_coupling",
    "loss_off",
    "loss_off_partial",
    "loss_ortho",
    "lumped_mass",
    "mean_geodesic_error",
    "nn_match",
    "normalize_unit_ball",
    "optimize_coupled",
    "pointcloud_laplacian",
    "save_shape",
    "spectral_embedding_nn_baseline",
    "total_loss",
    "total_loss_partial",
    "transfer_segments",
]
