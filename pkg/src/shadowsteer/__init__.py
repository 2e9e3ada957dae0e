"""shadowsteer: steer cast shadows during diffusion-based portrait generation.

A small trainable denoiser exposes multi-scale internal features; compact
readout estimators recover shadow, depth, and identity from them; and a
test-time optimization loop edits the latent at a chosen denoising step so
the generated image carries a user-defined shadow while keeping its identity.
"""

from .diffusion import (
    DiffusionBackend,
    DiffusionTrainConfig,
    FeaturePyramid,
    LatentState,
    NoiseSchedule,
    SamplerConfig,
    SmallUNet,
    UNetConfig,
    train_diffusion,
)
from .estimators import (
    EstimatorTrainConfig,
    IDEstimator,
    RGBShadowEstimator,
    SDEstimator,
    id_embed,
    load_estimator,
    sd_estimate,
    train_id_estimator,
    train_rgb_estimator,
    train_sd_estimator,
    triplet_loss,
)
from .evaluation import (
    AblationReport,
    AblationVariant,
    ablation_variants,
    run_ablation,
    shadow_compliance,
    toy_cvs,
)
from .geometry import (
    BinaryMask,
    DepthMap,
    LightPosition,
    RaycastConfig,
    RaycastError,
    ShadowMap,
    apply_shadow_mask,
    raycast_shadow,
)
from .guidance import (
    ControlledResult,
    GuidanceConfig,
    GuidanceStack,
    ShadowControl,
    acquire_target_shadow,
    generate_with_control,
    guidance_loss,
    load_stack,
    optimize_latent,
)
from .scenes import (
    DatasetManifest,
    IdentityParams,
    Sample,
    build_dataset,
    load_manifest,
    render_sample,
    sample_identity,
)

__version__ = "0.1.0"
