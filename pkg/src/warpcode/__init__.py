"""Multi-view feature learning on orthogonal warps.

Closed-form subspace rotation detectors built from warp eigenspaces, a
trainable gated autoencoder counterpart, synthetic datasets, and analysis
tools for quadrature, eigenmovie, and invariance experiments.
"""

from .analysis import (
    QuadratureReport,
    eigenmovie_consistency,
    export_filter_grid,
    invariance_ratio,
    quadrature_pair_score,
    score_filter_bank_pairs,
    spectral_overlap,
)
from .dataset import (
    LabeledImageSet,
    PairDataset,
    VideoDataset,
    WarpLabel,
    gen_dot_pairs,
    gen_rotated_glyphs,
    gen_videos,
    load_idx,
)
from .detector import (
    DetectorBank,
    DetectorResponse,
    build_bank_from_warp_family,
    energy_detector_response,
    pooled_code,
    project,
    rotation_detector_response,
    sequence_detector_response,
    subspace_angle_cos,
)
from .model import (
    GatedModel,
    TrainConfig,
    TrainingTrace,
    energy_forward,
    image_codes,
    infer_mappings,
    infer_sequence,
    load_model,
    loss_and_gradient,
    reconstruct,
    save_model,
    train,
)
from .patches import ImagePatch, contrast_normalize
from .storage import load_matrix, save_matrix
from .warp_algebra import (
    SubspaceBlock,
    SubspaceDecomposition,
    WarpMatrix,
    apply_warp,
    commutation_residual,
    decompose,
    decompose_approx,
    make_cyclic_shift,
    make_rotation_warp,
    make_translation_warp,
    rotate_image,
    shared_subspace_alignment,
)

__version__ = "0.1.0"
