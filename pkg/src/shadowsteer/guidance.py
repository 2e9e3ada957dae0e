"""Test-time shadow control: steer one denoising trajectory toward a target shadow.

The sampler runs normally until the intervention step. There, a single
reference pass reads the current estimated shadow, depth, and identity
embedding from the frozen readouts; the user's control is turned into a
target shadow exactly once (mask editing or ray casting from the estimated
depth); then the latent alone is optimized with Adam against

    lambda_shadow * L1(S_current, S_target) + lambda_identity * (1 - cos(I_current, I_ref))

and sampling resumes from the optimized latent. All network weights stay
frozen; shadow strength maps to the iteration budget.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .diffusion.backend import DiffusionBackend, LatentState, SamplerConfig
from .estimators import (
    IDEstimator,
    RGBShadowEstimator,
    SDEstimator,
    _predicted_rgb,
    load_estimator,
    pyramid_from_source,
)
from .geometry import (
    BinaryMask,
    DepthMap,
    LightPosition,
    RaycastConfig,
    ShadowMap,
    apply_shadow_mask,
    raycast_shadow,
)
from .imageio import base64_png_to_mask, mask_to_base64_png, save_image, save_scalar_map

# Latent-optimization learning-rate presets; the detailed inference recipe's
# value is the default, the terser training-section value ships as an
# alternative preset.
LR_PRESETS = {"appendix": 5e-2, "main_text": 2e-4}


@dataclass(frozen=True)
class ShadowControl:
    """User intent: darken a masked region, or relight from a 3D position."""

    mode: str  # "mask" | "directional_light"
    mask: np.ndarray | None = None
    darkness: float = 1.0
    light: LightPosition | None = None
    strength: float = 1.0

    def __post_init__(self):
        if self.mode == "mask":
            if self.mask is None or self.light is not None:
                raise ValueError("mask mode requires a mask and no light")
            BinaryMask(self.mask)  # validates {0,1} content
            if not 0.0 <= self.darkness <= 1.0:
                raise ValueError(f"darkness must lie in [0, 1], got {self.darkness}")
        elif self.mode == "directional_light":
            if self.light is None or self.mask is not None:
                raise ValueError("directional_light mode requires a light and no mask")
        else:
            raise ValueError(f"unknown control mode {self.mode!r}")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"strength must lie in [0, 1], got {self.strength}")

    def to_dict(self) -> dict:
        payload = {"mode": self.mode, "strength": self.strength}
        if self.mode == "mask":
            payload["mask_png_base64"] = mask_to_base64_png(self.mask)
            payload["darkness"] = self.darkness
        else:
            payload["light"] = [self.light.x, self.light.y, self.light.z]
        return payload

    @classmethod
    def from_dict(cls, data: dict) -> "ShadowControl":
        mode = data.get("mode")
        strength = float(data.get("strength", 1.0))
        if mode == "mask":
            if "mask_png_base64" not in data:
                raise ValueError("mask mode requires mask_png_base64")
            if data.get("light") is not None:
                raise ValueError("mask mode must not carry a light position")
            return cls(
                mode="mask",
                mask=base64_png_to_mask(data["mask_png_base64"]),
                darkness=float(data.get("darkness", 1.0)),
                strength=strength,
            )
        if mode == "directional_light":
            if "light" not in data:
                raise ValueError("directional_light mode requires light")
            if data.get("mask_png_base64") is not None:
                raise ValueError("directional_light mode must not carry a mask")
            light = data["light"]
            if len(light) != 3:
                raise ValueError("light must be an [x, y, z] array")
            return cls(mode="directional_light", light=LightPosition(*map(float, light)), strength=strength)
        raise ValueError(f"unknown control mode {mode!r}")


@dataclass(frozen=True)
class GuidanceConfig:
    intervention_step: int = 40
    lambda_shadow: float = 1.0
    lambda_identity: float = 3.0
    max_iterations: int = 30
    lr: float = LR_PRESETS["appendix"]
    divergence_factor: float = 10.0
    sd_feature_source: str = "internal"  # internal | output | rgb
    id_constraint: str = "embedding"  # embedding | l1_input | l1_output

    def __post_init__(self):
        if self.lambda_shadow < 0.0 or self.lambda_identity < 0.0:
            raise ValueError("loss weights must be >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.sd_feature_source not in ("internal", "output", "rgb"):
            raise ValueError(f"unknown sd_feature_source {self.sd_feature_source!r}")
        if self.id_constraint not in ("embedding", "l1_input", "l1_output"):
            raise ValueError(f"unknown id_constraint {self.id_constraint!r}")

    def validate_against(self, sampler: SamplerConfig) -> None:
        if not 0 < self.intervention_step < sampler.inference_steps:
            raise ValueError(
                f"intervention_step {self.intervention_step} outside (0, {sampler.inference_steps})"
            )

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class GuidanceStack:
    """Frozen backend plus the readouts guidance may need."""

    backend: DiffusionBackend
    sd: SDEstimator
    id: IDEstimator
    sd_output: SDEstimator | None = None
    rgb: RGBShadowEstimator | None = None

    def __post_init__(self):
        for module in (self.backend.model, self.sd, self.id, self.sd_output, self.rgb):
            if module is not None:
                module.eval()
                for p in module.parameters():
                    p.requires_grad_(False)

    def sd_for(self, source: str):
        if source == "internal":
            return self.sd
        if source == "output":
            if self.sd_output is None:
                raise ValueError("no output-feature shadow estimator loaded")
            return self.sd_output
        if source == "rgb":
            if self.rgb is None:
                raise ValueError("no RGB-space shadow estimator loaded")
            return self.rgb
        raise ValueError(f"unknown sd_feature_source {source!r}")


def load_stack(
    diffusion_ckpt: str | Path,
    sd_ckpt: str | Path,
    id_ckpt: str | Path,
    sd_output_ckpt: str | Path | None = None,
    rgb_ckpt: str | Path | None = None,
) -> GuidanceStack:
    """Load and hash-verify a full control stack."""
    backend = DiffusionBackend.load_checkpoint(diffusion_ckpt)
    return GuidanceStack(
        backend=backend,
        sd=load_estimator(sd_ckpt, backend),
        id=load_estimator(id_ckpt, backend),
        sd_output=load_estimator(sd_output_ckpt, backend) if sd_output_ckpt else None,
        rgb=load_estimator(rgb_ckpt, backend) if rgb_ckpt else None,
    )


def acquire_target_shadow(
    control: ShadowControl, estimated_shadow: ShadowMap, estimated_depth: DepthMap
) -> ShadowMap:
    """Turn user intent into a target shadow map (runs once per generation)."""
    if control.mode == "mask":
        return apply_shadow_mask(estimated_shadow, BinaryMask(control.mask), control.darkness)
    return raycast_shadow(estimated_depth, control.light, RaycastConfig())


def guidance_loss(
    s_current: torch.Tensor,
    s_target: torch.Tensor,
    i_current: torch.Tensor,
    i_ref: torch.Tensor,
    cfg: GuidanceConfig,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(total, shadow_term, identity_term); all differentiable, total >= 0."""
    for name, tensor in (("s_current", s_current), ("s_target", s_target)):
        if not torch.all(torch.isfinite(tensor)):
            raise ValueError(f"{name} contains NaN/Inf")
    shadow_term = (s_current - s_target).abs().mean()
    identity_term = 1.0 - (i_current * i_ref).sum(dim=-1).mean()
    total = cfg.lambda_shadow * shadow_term + cfg.lambda_identity * identity_term
    return total, shadow_term, identity_term


@dataclass
class _Reference:
    """Everything captured by the single reference pass at the intervention step."""

    shadow: ShadowMap
    depth: DepthMap
    embedding: torch.Tensor | None
    x_ref: torch.Tensor | None
    eps_ref: torch.Tensor | None


def _estimate_maps(stack: GuidanceStack, cfg: GuidanceConfig, x: torch.Tensor, t: int, grad: bool):
    """Shadow/depth tensors for the configured feature source."""
    estimator = stack.sd_for(cfg.sd_feature_source)
    if cfg.sd_feature_source == "rgb":
        rgb = _predicted_rgb(stack.backend, x, t, grad=grad)
        return estimator(rgb)
    pyramid = pyramid_from_source(stack.backend, x, t, cfg.sd_feature_source, grad=grad)
    return estimator(pyramid.taps)


def _capture_reference(stack: GuidanceStack, cfg: GuidanceConfig, state: LatentState, t: int) -> _Reference:
    with torch.no_grad():
        shadow, depth = _estimate_maps(stack, cfg, state.x_t, t, grad=False)
        embedding = x_ref = eps_ref = None
        if cfg.id_constraint == "embedding":
            pyramid = stack.backend.features_at(state.x_t, t)
            embedding = stack.id(pyramid.taps)
        elif cfg.id_constraint == "l1_input":
            x_ref = state.x_t.detach().clone()
        else:
            eps_ref = stack.backend.eps_at(state.x_t, t).detach().clone()
    return _Reference(
        shadow=ShadowMap(shadow[0, 0].double().numpy()),
        depth=DepthMap(depth[0, 0].double().numpy()),
        embedding=embedding,
        x_ref=x_ref,
        eps_ref=eps_ref,
    )


def optimize_latent(
    state: LatentState,
    target: ShadowMap,
    i_ref: torch.Tensor | None,
    cfg: GuidanceConfig,
    stack: GuidanceStack,
    iterations: int,
    t: int,
    reference: _Reference | None = None,
) -> tuple[LatentState, list[dict], bool]:
    """Adam on the latent only; returns (state, per-iteration trace, diverged flag).

    Aborts and returns the best state seen so far if the total loss ever
    exceeds ``divergence_factor`` times its initial value.
    """
    if iterations == 0:
        return state, [], False

    target_t = torch.from_numpy(target.grid).to(state.x_t.dtype)[None, None]
    x = state.x_t.detach().clone().requires_grad_(True)
    optimizer = torch.optim.Adam([x], lr=cfg.lr)

    trace: list[dict] = []
    best_x = x.detach().clone()
    best_total = None
    initial_total = None
    diverged = False
    converged_total = 1e-7  # at the global minimum Adam would amplify float noise
    for _ in range(iterations):
        s_current, _ = _estimate_maps(stack, cfg, x, t, grad=True)
        if cfg.id_constraint == "embedding":
            pyramid = stack.backend.features_at(x, t, grad=True)
            i_current = stack.id(pyramid.taps)
            total, shadow_term, identity_term = guidance_loss(s_current, target_t, i_current, i_ref, cfg)
        elif cfg.id_constraint == "l1_input":
            shadow_term = (s_current - target_t).abs().mean()
            identity_term = (x - reference.x_ref).abs().mean()
            total = cfg.lambda_shadow * shadow_term + cfg.lambda_identity * identity_term
        else:  # l1_output
            shadow_term = (s_current - target_t).abs().mean()
            eps = stack.backend.eps_at(x, t, grad=True)
            identity_term = (eps - reference.eps_ref).abs().mean()
            total = cfg.lambda_shadow * shadow_term + cfg.lambda_identity * identity_term

        trace.append(
            {
                "shadow": float(shadow_term.item()),
                "identity": float(identity_term.item()),
                "total": float(total.item()),
            }
        )
        if initial_total is None:
            initial_total = total.item()
        if best_total is None or total.item() <= best_total:
            best_total = total.item()
            best_x = x.detach().clone()
        if total.item() < converged_total:
            break
        if total.item() > cfg.divergence_factor * max(initial_total, 1e-12):
            diverged = True
            break

        optimizer.zero_grad()
        total.backward()
        optimizer.step()

    final_x = best_x if diverged else x.detach()
    return replace(state, x_t=final_x), trace, diverged


@dataclass
class ControlledResult:
    """One controlled generation with everything needed for exact replay."""

    image: np.ndarray
    target_shadow: ShadowMap
    trace: list[dict]
    est_shadow_before: ShadowMap
    est_shadow_after: ShadowMap
    est_depth: DepthMap
    seed: int
    cond: int | None
    control: ShadowControl
    guidance_config: GuidanceConfig
    sampler_config: SamplerConfig
    iterations: int
    diverged: bool
    reference_captures: int

    def config_payload(self) -> dict:
        return {
            "seed": self.seed,
            "cond": self.cond,
            "control": self.control.to_dict(),
            "guidance": self.guidance_config.to_dict(),
            "sampler": self.sampler_config.to_dict(),
        }

    def save(self, run_dir: str | Path) -> None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        save_image(run_dir / "result.png", self.image)
        save_scalar_map(run_dir / "target_shadow.png", self.target_shadow.grid)
        save_scalar_map(run_dir / "est_shadow_before.png", self.est_shadow_before.grid)
        save_scalar_map(run_dir / "est_shadow_after.png", self.est_shadow_after.grid)
        save_scalar_map(run_dir / "est_depth.png", self.est_depth.grid)
        (run_dir / "trace.json").write_text(
            json.dumps({"iterations": self.iterations, "diverged": self.diverged, "trace": self.trace}, indent=1)
        )
        (run_dir / "config.json").write_text(json.dumps(self.config_payload(), sort_keys=True, indent=1))


def replay_config(path: str | Path) -> dict:
    """Parse a stored run's config.json into constructor-ready pieces."""
    data = json.loads(Path(path).read_text())
    return {
        "seed": data["seed"],
        "cond": data["cond"],
        "control": ShadowControl.from_dict(data["control"]),
        "gcfg": GuidanceConfig(**data["guidance"]),
        "scfg": SamplerConfig(**data["sampler"]),
    }


def generate_with_control(
    cond: int | None,
    seed: int,
    control: ShadowControl,
    gcfg: GuidanceConfig,
    scfg: SamplerConfig,
    stack: GuidanceStack,
    progress=None,
) -> ControlledResult:
    """Full controlled generation: sample, intervene once, resume, package the result."""
    gcfg.validate_against(scfg)
    if control.mode == "mask" and control.mask.shape != (stack.backend.image_size, stack.backend.image_size):
        raise ValueError(
            f"mask shape {control.mask.shape} does not match image size {stack.backend.image_size}"
        )

    iterations = round(control.strength * gcfg.max_iterations)
    captured: dict = {"count": 0}

    def hook(state: LatentState) -> LatentState | None:
        if state.step_index != gcfg.intervention_step:
            return None
        t = stack.backend.step_timestep(state.step_index, scfg)
        reference = _capture_reference(stack, gcfg, state, t)
        captured["count"] += 1
        captured["reference"] = reference
        target = acquire_target_shadow(control, reference.shadow, reference.depth)
        captured["target"] = target

        new_state, trace, diverged = optimize_latent(
            state, target, reference.embedding, gcfg, stack, iterations, t, reference
        )
        captured["trace"] = trace
        captured["diverged"] = diverged
        with torch.no_grad():
            shadow_after, _ = _estimate_maps(stack, gcfg, new_state.x_t, t, grad=False)
        captured["shadow_after"] = ShadowMap(shadow_after[0, 0].double().numpy())
        return new_state

    image = stack.backend.generate(cond, seed, scfg, hook=hook, progress=progress)

    if captured["count"] != 1:
        raise RuntimeError(f"reference pass ran {captured['count']} times; expected exactly once")
    reference = captured["reference"]
    return ControlledResult(
        image=image,
        target_shadow=captured["target"],
        trace=captured["trace"],
        est_shadow_before=reference.shadow,
        est_shadow_after=captured["shadow_after"],
        est_depth=reference.depth,
        seed=seed,
        cond=cond,
        control=control,
        guidance_config=gcfg,
        sampler_config=scfg,
        iterations=iterations,
        diverged=captured["diverged"],
        reference_captures=captured["count"],
    )
