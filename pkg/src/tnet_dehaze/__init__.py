"""Recursive multi-scale dehazing: network, losses, synthetic data,
training, and evaluation."""

from .backbone import TNet, TNetConfig, build_tnet
from .blocks import (
    DownsampleBlock,
    DualAttention,
    RdbSpec,
    ResidualDenseBlock,
    UpsampleBlock,
    WeightedFusion,
    channel_attention,
    count_parameters,
    init_parameters,
    position_attention,
)
from .checkpoint import Checkpoint, configs_to_dict, load_checkpoint, save_checkpoint
from .errors import (
    ConfigError,
    DomainError,
    ExtractorUnavailableError,
    ShapeError,
    TnetDehazeError,
    TrainingDiverged,
)
from .hazesynth import (
    HazeSample,
    apply_haze,
    build_dataset,
    invert_haze,
    make_clean_image,
    make_depth,
    read_manifest,
    transmission_from_depth,
)
from .images import ImageBuffer, from_network_tensor, load_image, save_image, to_network_tensor
from .losses import (
    FeatureExtractorSpec,
    FixedRandomPyramid,
    LossConfig,
    VggFeatureExtractor,
    build_extractor,
    smooth_l1_pointwise,
    stage_perceptual,
    stage_smooth_l1,
    total_loss,
)
from .metrics import MetricReport, evaluate_pairs, psnr, ssim
from .stack import StackConfig, StackOutput, StackTNet, stack_forward
from .trainer import TrainConfig, TrainResult, augment, held_out_split, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "TNet",
    "TNetConfig",
    "build_tnet",
    "DownsampleBlock",
    "DualAttention",
    "RdbSpec",
    "ResidualDenseBlock",
    "UpsampleBlock",
    "WeightedFusion",
    "channel_attention",
    "position_attention",
    "count_parameters",
    "init_parameters",
    "Checkpoint",
    "configs_to_dict",
    "load_checkpoint",
    "save_checkpoint",
    "TnetDehazeError",
    "ConfigError",
    "DomainError",
    "ShapeError",
    "ExtractorUnavailableError",
    "TrainingDiverged",
    "HazeSample",
    "apply_haze",
    "invert_haze",
    "transmission_from_depth",
    "make_depth",
    "make_clean_image",
    "build_dataset",
    "read_manifest",
    "ImageBuffer",
    "load_image",
    "save_image",
    "to_network_tensor",
    "from_network_tensor",
    "FeatureExtractorSpec",
    "FixedRandomPyramid",
    "VggFeatureExtractor",
    "LossConfig",
    "build_extractor",
    "smooth_l1_pointwise",
    "stage_smooth_l1",
    "stage_perceptual",
    "total_loss",
    "MetricReport",
    "evaluate_pairs",
    "psnr",
    "ssim",
    "StackConfig",
    "StackOutput",
    "StackTNet",
    "stack_forward",
    "TrainConfig",
    "TrainResult",
    "augment",
    "held_out_split",
    "lr_at",
    "train",
    "__version__",
]
