"""Dense patch-descriptor toolkit: co-segmentation, part discovery, and
point correspondences over descriptor fields stored as VITD files."""

from .analysis import PCAResult, pca, render_component_maps
from .binning import BinningConfig, log_bin
from .clustering import (
    ClusterModel,
    assign,
    elbow_select_k,
    kmeans,
    l2_normalize_rows,
)
from .correspondence import MatchSet, best_buddies, match_keypoints, nearest_neighbor
from .cosegmentation import (
    CosegResult,
    VotingConfig,
    build_masks,
    cosegment,
    refine_mask,
    refine_parts,
    segment_saliency,
    upsample_mask,
    vote_foreground,
)
from .metrics import (
    LandmarkRegressionResult,
    jaccard,
    landmark_regression_error,
    nmi_ari,
    pck,
    precision_px,
)
from .parts import part_segment
from .store import (
    DescriptorField,
    DescriptorMatrix,
    FieldFormatError,
    FieldInvariantError,
    FieldMeta,
    LabelMask,
    SaliencyField,
    patch_center_px,
    pixel_to_patch,
    read_field,
    stack_fields,
    write_field,
)

__version__ = "0.1.0"

__all__ = [
    "BinningConfig",
    "ClusterModel",
    "CosegResult",
    "DescriptorField",
    "DescriptorMatrix",
    "FieldFormatError",
    "FieldInvariantError",
    "FieldMeta",
    "LabelMask",
    "LandmarkRegressionResult",
    "MatchSet",
    "PCAResult",
    "SaliencyField",
    "VotingConfig",
    "assign",
    "best_buddies",
    "build_masks",
    "cosegment",
    "elbow_select_k",
    "jaccard",
    "kmeans",
    "l2_normalize_rows",
    "landmark_regression_error",
    "log_bin",
    "match_keypoints",
    "nearest_neighbor",
    "nmi_ari",
    "part_segment",
    "patch_center_px",
    "pca",
    "pck",
    "pixel_to_patch",
    "precision_px",
    "read_field",
    "refine_mask",
    "refine_parts",
    "render_component_maps",
    "segment_saliency",
    "stack_fields",
    "upsample_mask",
    "vote_foreground",
    "write_field",
    "__version__",
]
