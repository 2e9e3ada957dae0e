"""Sampler-facing wrapper around the UNet: CFG, DDIM stepping, feature taps.

The backend owns immutable model weights plus the noise schedule and exposes
the operations the rest of the package builds on: forward noising, the
classifier-free-guided eps prediction (with optional feature pyramid from the
unconditional pass), the deterministic DDIM step, and full generation with a
per-step hook that may replace the latent (the shadow-control entry point).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .schedule import NoiseSchedule
from .unet import SmallUNet, UNetConfig

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint missing, version-mismatched, or incompatible."""


@dataclass(frozen=True)
class SamplerConfig:
    cfg_scale: float = 6.0
    inference_steps: int = 100
    eta: float = 0.0

    def __post_init__(self):
        if self.cfg_scale < 1.0:
            raise ValueError(f"cfg_scale must be >= 1, got {self.cfg_scale}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.eta != 0.0:
            raise ValueError("stochastic sampling (eta > 0) is not supported")

    def to_dict(self) -> dict:
        return {"cfg_scale": self.cfg_scale, "inference_steps": self.inference_steps, "eta": self.eta}


@dataclass
class LatentState:
    """The sampler's carried state: noisy latent, progress index, provenance."""

    x_t: torch.Tensor  # 1 x C x H x W
    step_index: int
    seed: int
    cond: int | None

    def detached(self) -> "LatentState":
        return replace(self, x_t=self.x_t.detach().clone())


@dataclass
class FeaturePyramid:
    """Multi-scale UNet activations tapped during one forward pass."""

    taps: list[torch.Tensor]
    t: int | torch.Tensor  # per-batch timesteps when training estimators
    step_index: int | None = None

    def __post_init__(self):
        for tap in self.taps:
            if not torch.all(torch.isfinite(tap)):
                raise ValueError("feature pyramid contains non-finite values")


class DiffusionBackend:
    def __init__(self, model: SmallUNet, schedule: NoiseSchedule):
        self.model = model
        self.schedule = schedule
        self.model.eval()

    @property
    def image_size(self) -> int:
        return self.model.config.image_size

    @property
    def num_classes(self) -> int:
        return self.model.config.num_classes

    @property
    def dtype(self) -> torch.dtype:
        return next(self.model.parameters()).dtype

    def to_dtype(self, dtype: torch.dtype) -> "DiffusionBackend":
        self.model.to(dtype)
        return self

    # ---- forward process -------------------------------------------------

    def add_noise(self, x0: torch.Tensor, t: int, noise: torch.Tensor) -> torch.Tensor:
        if noise.shape != x0.shape:
            raise ValueError(f"noise shape {noise.shape} must match x0 shape {x0.shape}")
        return self.schedule.add_noise(x0, t, noise)

    # ---- eps prediction ----------------------------------------------------

    def _label_tensor(self, cond: int | None, batch: int) -> torch.Tensor:
        idx = self.model.null_label if cond is None else int(cond)
        if not 0 <= idx <= self.model.null_label:
            raise ValueError(f"conditioning label {cond} outside [0, {self.num_classes})")
        return torch.full((batch,), idx, dtype=torch.long)

    def unet_forward(
        self,
        state: LatentState,
        cond: int | None,
        sampler: SamplerConfig,
        tap: bool = False,
    ) -> tuple[torch.Tensor, FeaturePyramid | None]:
        """CFG-combined eps at the state's current timestep.

        The pyramid, when requested, comes from the unconditional pass.
        Differentiable with respect to state.x_t.
        """
        t = self._timestep_of(state, sampler)
        x = state.x_t
        t_vec = torch.full((x.shape[0],), t, dtype=torch.long)

        if sampler.cfg_scale == 1.0 and not tap:
            eps, _ = self.model(x, t_vec, self._label_tensor(cond, x.shape[0]))
            return eps, None

        eps_uncond, feats = self.model(x, t_vec, self._label_tensor(None, x.shape[0]), return_features=tap)
        if sampler.cfg_scale == 1.0 or cond is None:
            eps = self.model(x, t_vec, self._label_tensor(cond, x.shape[0]))[0] if cond is not None else eps_uncond
        else:
            eps_cond, _ = self.model(x, t_vec, self._label_tensor(cond, x.shape[0]))
            eps = eps_uncond + sampler.cfg_scale * (eps_cond - eps_uncond)

        pyramid = FeaturePyramid(feats, t=t, step_index=state.step_index) if tap else None
        return eps, pyramid

    def features_at(self, x_t: torch.Tensor, t: int | torch.Tensor, grad: bool = False) -> FeaturePyramid:
        """Unconditional-pass pyramid for an arbitrary noisy latent at timestep t."""
        t_vec = t if torch.is_tensor(t) else torch.full((x_t.shape[0],), t, dtype=torch.long)
        labels = self._label_tensor(None, x_t.shape[0])
        if grad:
            _, feats = self.model(x_t, t_vec, labels, return_features=True)
        else:
            with torch.no_grad():
                _, feats = self.model(x_t, t_vec, labels, return_features=True)
        return FeaturePyramid(feats, t=t)

    def eps_at(self, x_t: torch.Tensor, t: int | torch.Tensor, grad: bool = False) -> torch.Tensor:
        """Unconditional eps prediction for an arbitrary noisy latent."""
        t_vec = t if torch.is_tensor(t) else torch.full((x_t.shape[0],), t, dtype=torch.long)
        labels = self._label_tensor(None, x_t.shape[0])
        if grad:
            return self.model(x_t, t_vec, labels)[0]
        with torch.no_grad():
            return self.model(x_t, t_vec, labels)[0]

    # ---- sampling ----------------------------------------------------------

    def _times(self, sampler: SamplerConfig) -> np.ndarray:
        if sampler.inference_steps != self.schedule.inference_steps:
            schedule = NoiseSchedule(
                T_train=self.schedule.T_train,
                inference_steps=sampler.inference_steps,
                betas=self.schedule.betas,
            )
            return schedule.inference_times()
        return self.schedule.inference_times()

    def step_timestep(self, step_index: int, sampler: SamplerConfig) -> int:
        """Training timestep occupied by the latent after step_index completed steps."""
        times = self._times(sampler)
        if not 0 <= step_index < len(times):
            raise ValueError(f"step_index {step_index} outside [0, {len(times)})")
        return int(times[step_index])

    def _timestep_of(self, state: LatentState, sampler: SamplerConfig) -> int:
        return self.step_timestep(state.step_index, sampler)

    def denoise_step(self, state: LatentState, eps: torch.Tensor, sampler: SamplerConfig) -> tuple[LatentState, torch.Tensor]:
        """One deterministic DDIM update; returns the advanced state and predicted x0."""
        times = self._times(sampler)
        k = state.step_index
        if k >= len(times):
            raise ValueError(f"cannot step past the end of the schedule (step_index={k})")
        t = int(times[k])
        t_prev = int(times[k + 1]) if k + 1 < len(times) else -1
        x_prev, x0_pred = self.schedule.ddim_step(state.x_t, eps, t, t_prev)
        return replace(state, x_t=x_prev, step_index=k + 1), x0_pred

    def initial_state(self, cond: int | None, seed: int, sampler: SamplerConfig) -> LatentState:
        gen = torch.Generator().manual_seed(seed)
        size = self.image_size
        x = torch.randn((1, self.model.config.in_channels, size, size), generator=gen, dtype=self.dtype)
        return LatentState(x_t=x, step_index=0, seed=seed, cond=cond)

    def generate(
        self,
        cond: int | None,
        seed: int,
        sampler: SamplerConfig | None = None,
        hook=None,
        progress=None,
    ) -> np.ndarray:
        """Run the full sampler; the hook may replace the latent at any step.

        The hook is called at the top of each step with the current
        LatentState and must return a LatentState (or None to leave the
        trajectory untouched). Output is an H x W x 3 image in [0, 1].
        """
        sampler = sampler or SamplerConfig()
        state = self.initial_state(cond, seed, sampler)
        for k in range(sampler.inference_steps):
            if hook is not None:
                new_state = hook(state)
                if new_state is not None:
                    if new_state.x_t.shape != state.x_t.shape:
                        raise ValueError(
                            f"hook returned latent of shape {tuple(new_state.x_t.shape)}, "
                            f"expected {tuple(state.x_t.shape)}"
                        )
                    state = new_state
            with torch.no_grad():
                eps, _ = self.unet_forward(state, cond, sampler)
                state, _ = self.denoise_step(state, eps, sampler)
            if progress is not None:
                progress(state.step_index, sampler.inference_steps)
        return self.decode(state.x_t)

    def decode(self, x: torch.Tensor) -> np.ndarray:
        """Model domain [-1, 1] to an H x W x 3 image in [0, 1]."""
        img = ((x.detach().float() + 1.0) / 2.0).clamp(0.0, 1.0)
        return img[0].permute(1, 2, 0).numpy().astype(np.float32)

    @staticmethod
    def encode(image: np.ndarray) -> torch.Tensor:
        """H x W x 3 image in [0, 1] to the model domain [-1, 1], batched."""
        arr = np.asarray(image, dtype=np.float32)
        x = torch.from_numpy(arr).permute(2, 0, 1)[None]
        return x * 2.0 - 1.0

    # ---- persistence ---------------------------------------------------------

    def config_payload(self) -> dict:
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "unet": self.model.config.to_dict(),
            "schedule": self.schedule.to_dict(),
        }

    def checkpoint_hash(self) -> str:
        return weights_hash(self.model.state_dict(), self.config_payload())

    def save_checkpoint(self, path: str | Path, extra: dict | None = None) -> str:
        payload = {
            "config": self.config_payload(),
            "state_dict": self.model.state_dict(),
            "checkpoint_hash": self.checkpoint_hash(),
        }
        if extra:
            payload["extra"] = extra
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
        return payload["checkpoint_hash"]

    @classmethod
    def load_checkpoint(cls, path: str | Path) -> "DiffusionBackend":
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"diffusion checkpoint not found: {path}")
        payload = torch.load(path, map_location="cpu", weights_only=False)
        config = payload["config"]
        if config.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint format {config.get('format_version')} != {CHECKPOINT_FORMAT_VERSION}"
            )
        model = SmallUNet(UNetConfig.from_dict(config["unet"]))
        model.load_state_dict(payload["state_dict"])
        backend = cls(model, NoiseSchedule.from_dict(config["schedule"]))
        return backend


def weights_hash(state_dict: dict, config: dict | None = None) -> str:
    """Stable digest of parameters (and optionally config) for freeze checks."""
    digest = hashlib.sha256()
    if config is not None:
        digest.update(json.dumps(config, sort_keys=True).encode())
    for name in sorted(state_dict):
        digest.update(name.encode())
        tensor = state_dict[name].detach().cpu().contiguous()
        digest.update(str(tensor.dtype).encode())
        digest.update(tensor.float().numpy().tobytes())
    return digest.hexdigest()
