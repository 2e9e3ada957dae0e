"""Label-conditioned eps-prediction training for the toy backend.

Batches, timesteps, noise, and label dropout are all drawn from a per-step
generator seeded by (seed, step), so training is stateless in the RNG:
resuming from a checkpoint replays the identical remaining steps, and two
full runs with the same config produce identical weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..scenes import DatasetManifest
from .backend import CheckpointError, DiffusionBackend
from .schedule import NoiseSchedule
from .unet import SmallUNet, UNetConfig


@dataclass(frozen=True)
class DiffusionTrainConfig:
    steps: int = 5000
    batch_size: int = 16
    lr: float = 2e-4
    label_dropout: float = 0.1
    seed: int = 0
    base_channels: int = 32
    log_every: int = 200
    probe_batches: int = 4  # fixed batches scoring initial/final loss

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _per_step_generator(seed: int, step: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed((seed * 1_000_003 + step) % (2**63 - 1))
    return gen


def _load_images(manifest: DatasetManifest, indices: list[int]) -> tuple[torch.Tensor, torch.Tensor]:
    images, labels = [], []
    for idx in indices:
        sample = manifest.load_sample(idx)
        images.append(DiffusionBackend.encode(sample.image))
        labels.append(sample.identity_id)
    return torch.cat(images, dim=0), torch.tensor(labels, dtype=torch.long)


def _batch(
    x0: torch.Tensor,
    labels: torch.Tensor,
    schedule: NoiseSchedule,
    cfg: DiffusionTrainConfig,
    null_label: int,
    step: int,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    gen = _per_step_generator(cfg.seed, step)
    n = x0.shape[0]
    idx = torch.randint(0, n, (cfg.batch_size,), generator=gen)
    t = torch.randint(0, schedule.T_train, (cfg.batch_size,), generator=gen)
    noise = torch.randn((cfg.batch_size, *x0.shape[1:]), generator=gen)
    drop = torch.rand((cfg.batch_size,), generator=gen) < cfg.label_dropout
    batch_labels = labels[idx].clone()
    batch_labels[drop] = null_label

    ab = torch.from_numpy(schedule.alpha_bar.astype(np.float32))[t]
    x_t = ab.sqrt()[:, None, None, None] * x0[idx] + (1.0 - ab).sqrt()[:, None, None, None] * noise
    return x_t, t, batch_labels, noise


def _probe_loss(model: SmallUNet, x0, labels, schedule, cfg) -> float:
    """Mean eps-prediction loss on fixed probe batches (deterministic)."""
    model.eval()
    losses = []
    with torch.no_grad():
        for b in range(cfg.probe_batches):
            x_t, t, batch_labels, noise = _batch(x0, labels, schedule, cfg, model.null_label, step=-(b + 1))
            eps, _ = model(x_t, t, batch_labels)
            losses.append(torch.mean((eps - noise) ** 2).item())
    return float(np.mean(losses))


def train_diffusion(
    manifest: DatasetManifest,
    config: DiffusionTrainConfig,
    out_path: str | Path,
    resume_from: str | Path | None = None,
    log=None,
) -> dict:
    """Train (or resume) the backend on a rendered corpus; writes a checkpoint.

    Returns a summary dict with initial/final probe losses and the per-step
    loss history. Conditioning is the identity label only; lighting is left
    unconditioned so shadow control must come from guidance, not labels.
    """
    train_indices = list(manifest.train) or list(range(manifest.n_samples))
    x0, labels = _load_images(manifest, train_indices)
    if int(labels.max()) >= manifest.n_identities:
        raise ValueError("identity labels exceed the manifest's identity count")

    schedule = NoiseSchedule()
    start_step = 0
    loss_history: list[float] = []
    resumed_initial = None
    if resume_from is not None:
        payload = torch.load(resume_from, map_location="cpu", weights_only=False)
        saved_cfg = payload.get("extra", {}).get("train_config")
        if saved_cfg is None:
            raise CheckpointError("checkpoint lacks training state; cannot resume")
        comparable = {k: v for k, v in saved_cfg.items() if k != "steps"}
        if comparable != {k: v for k, v in config.to_dict().items() if k != "steps"}:
            raise CheckpointError("resume config differs from the checkpoint's training config")
        model = SmallUNet(UNetConfig.from_dict(payload["config"]["unet"]))
        model.load_state_dict(payload["state_dict"])
        schedule = NoiseSchedule.from_dict(payload["config"]["schedule"])
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
        optimizer.load_state_dict(payload["extra"]["optimizer"])
        start_step = payload["extra"]["step"]
        loss_history = list(payload["extra"]["loss_history"])
        resumed_initial = payload["extra"].get("initial_probe_loss")
    else:
        unet_config = UNetConfig(
            image_size=manifest.image_size,
            base_channels=config.base_channels,
            num_classes=manifest.n_identities,
        )
        torch.manual_seed(config.seed)
        model = SmallUNet(unet_config)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)

    initial_probe = resumed_initial if resumed_initial is not None else _probe_loss(
        model, x0, labels, schedule, config
    )
    model.train()
    for step in range(start_step, config.steps):
        x_t, t, batch_labels, noise = _batch(x0, labels, schedule, config, model.null_label, step)
        eps, _ = model(x_t, t, batch_labels)
        loss = torch.mean((eps - noise) ** 2)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        loss_history.append(loss.item())
        if log is not None and (step + 1) % config.log_every == 0:
            log(f"diffusion step {step + 1}/{config.steps} loss {loss.item():.4f}")

    model.eval()
    final_probe = _probe_loss(model, x0, labels, schedule, config)
    backend = DiffusionBackend(model, schedule)
    extra = {
        "train_config": config.to_dict(),
        "optimizer": optimizer.state_dict(),
        "step": config.steps,
        "loss_history": loss_history,
        "initial_probe_loss": initial_probe,
        "final_probe_loss": final_probe,
    }
    ckpt_hash = backend.save_checkpoint(out_path, extra=extra)
    return {
        "checkpoint": str(out_path),
        "checkpoint_hash": ckpt_hash,
        "initial_probe_loss": initial_probe,
        "final_probe_loss": final_probe,
        "loss_history": loss_history,
    }
