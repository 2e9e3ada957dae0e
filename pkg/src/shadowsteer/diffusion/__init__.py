from .schedule import NoiseSchedule
from .backend import (
    CHECKPOINT_FORMAT_VERSION,
    DiffusionBackend,
    FeaturePyramid,
    LatentState,
    SamplerConfig,
)
from .training import DiffusionTrainConfig, train_diffusion
from .unet import SmallUNet, UNetConfig

__all__ = [
    "CHECKPOINT_FORMAT_VERSION",
    "DiffusionBackend",
    "DiffusionTrainConfig",
    "FeaturePyramid",
    "LatentState",
    "NoiseSchedule",
    "SamplerConfig",
    "SmallUNet",
    "UNetConfig",
    "train_diffusion",
]
