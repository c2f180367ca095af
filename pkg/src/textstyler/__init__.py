"""Text-driven image stylization.

Optimize a lightweight image-to-image network so that random patches of its
output move toward a free-text style description in a joint text-image
embedding space, while staying close to the content image in perceptual
feature space. Two modes: per-image optimization and a reusable
fast-transfer network trained once on texture crops.
"""

from .core import (
    ABLATIONS,
    BackendUnavailableError,
    CheckpointError,
    ConfigError,
    LossReport,
    NonFiniteLossError,
    RngStreams,
    StylePrompt,
    TrainConfig,
    apply_ablation,
    default_config,
    derive_seed,
    load_config,
    save_config,
)
from .encoders import (
    DEFAULT_TEMPLATES,
    ClipEncoder,
    FeatureMap,
    StubEncoder,
    StubPerceptual,
    VggPerceptual,
    content_features,
    embed_prompt_ensemble,
    encode_image,
    encode_text,
    make_backend,
    make_extractor,
)
from .evaluation import EvalReport, content_preservation, patchwise_clip_score
from .images import enhance_contrast, load_image, save_image, validate_image
from .losses import (
    DirectionPair,
    content_loss,
    directional_loss,
    global_clip_loss,
    patch_clip_loss,
    total_loss,
    tv_loss,
)
from .networks import (
    FastStyler,
    UNetStyler,
    init_weights,
    load_checkpoint,
    save_checkpoint,
    stylize,
)
from .patches import (
    PatchBatch,
    augment_batch,
    crop_patches,
    perspective_augment,
    prepare_encoder_batch,
    resize_bilinear,
    sample_perspective,
    warp_perspective,
)
from .training import (
    TextureDataset,
    TrainState,
    lr_schedule,
    train_fast,
    train_single,
    write_history_csv,
)

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "BackendUnavailableError",
    "CheckpointError",
    "ClipEncoder",
    "ConfigError",
    "DEFAULT_TEMPLATES",
    "DirectionPair",
    "EvalReport",
    "FastStyler",
    "FeatureMap",
    "LossReport",
    "NonFiniteLossError",
    "PatchBatch",
    "RngStreams",
    "StubEncoder",
    "StubPerceptual",
    "StylePrompt",
    "TextureDataset",
    "TrainConfig",
    "TrainState",
    "UNetStyler",
    "VggPerceptual",
    "apply_ablation",
    "augment_batch",
    "content_features",
    "content_loss",
    "content_preservation",
    "crop_patches",
    "default_config",
    "derive_seed",
    "directional_loss",
    "embed_prompt_ensemble",
    "encode_image",
    "encode_text",
    "enhance_contrast",
    "global_clip_loss",
    "init_weights",
    "load_checkpoint",
    "load_config",
    "load_image",
    "lr_schedule",
    "make_backend",
    "make_extractor",
    "patch_clip_loss",
    "patchwise_clip_score",
    "perspective_augment",
    "prepare_encoder_batch",
    "resize_bilinear",
    "sample_perspective",
    "save_checkpoint",
    "save_config",
    "save_image",
    "stylize",
    "total_loss",
    "train_fast",
    "train_single",
    "tv_loss",
    "validate_image",
    "warp_perspective",
    "write_history_csv",
]
