"""Readout estimators over the denoiser's internal features.

Two compact networks share a fusion design: each pyramid tap is projected by
convolutions to a common width at image resolution, the taps are blended by a
softmax over learned scalar weights, and task heads read the fused map. The
shadow-depth estimator emits sigmoid-bounded shadow and depth maps; the
identity estimator pools to a unit-length embedding trained with a cosine
triplet hinge. A third, image-space variant estimates shadow/depth straight
from RGB decodes and exists for the ablation comparing latent-space and
RGB-space readouts.

All training here freezes the denoiser: only readout weights move.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion.backend import CheckpointError, DiffusionBackend, FeaturePyramid
from .geometry import DepthMap, ShadowMap
from .scenes import DatasetManifest

ESTIMATOR_FORMAT_VERSION = 1

VAL_TIMESTEP = 100  # fixed low-noise timestep for map validation
TRIPLET_EVAL_T_MAX = 500  # identity is unrecoverable past ~half the schedule


@dataclass(frozen=True)
class EstimatorTrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 8  # identity training overrides this with its 2+1 triplet
    margin: float = 0.5
    t_range: tuple[int, int] = (0, 1000)
    max_epochs: int = 12
    seed: int = 0
    fused_channels: int = 64
    embedding_dim: int = 128
    lr_schedule: str = "cosine"  # cosine | constant; epoch-stepped decay

    def __post_init__(self):
        if self.margin <= 0.0:
            raise ValueError("margin must be > 0")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["t_range"] = list(self.t_range)
        return d

    def make_scheduler(self, optimizer: torch.optim.Optimizer):
        if self.lr_schedule == "cosine":
            return torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=self.max_epochs)
        return torch.optim.lr_scheduler.ConstantLR(optimizer, factor=1.0, total_iters=0)


class _TapFusion(nn.Module):
    """Project taps to a common width at image resolution, softmax-blend them.

    Each projection starts with a GroupNorm: UNet activations scale strongly
    with the noise level, and unnormalized taps destabilize readout training
    (the identity estimator collapses outright without this).
    """

    def __init__(self, tap_shapes: list[tuple[int, int]], image_size: int, width: int):
        super().__init__()
        self.image_size = image_size
        self.projections = nn.ModuleList()
        for channels, _res in tap_shapes:
            self.projections.append(
                nn.Sequential(
                    nn.GroupNorm(_groups_for(channels), channels),
                    nn.Conv2d(channels, width, 3, padding=1),
                    nn.SiLU(),
                    nn.Conv2d(width, width, 3, padding=1),
                )
            )
        self.tap_logits = nn.Parameter(torch.zeros(len(tap_shapes)))

    def forward(self, taps: list[torch.Tensor]) -> torch.Tensor:
        if len(taps) != len(self.projections):
            raise ValueError(f"expected {len(self.projections)} taps, got {len(taps)}")
        projected = []
        for proj, tap in zip(self.projections, taps):
            h = proj(tap)
            if h.shape[-1] != self.image_size:
                h = F.interpolate(h, size=(self.image_size, self.image_size), mode="bilinear", align_corners=False)
            projected.append(h)
        weights = torch.softmax(self.tap_logits, dim=0)
        fused = sum(w * h for w, h in zip(weights, projected))
        return fused


def _groups_for(channels: int) -> int:
    return min(8, channels)


def _map_head(width: int) -> nn.Sequential:
    return nn.Sequential(
        nn.GroupNorm(_groups_for(width), width),
        nn.Conv2d(width, width, 3, padding=1),
        nn.SiLU(),
        nn.GroupNorm(_groups_for(width), width),
        nn.Conv2d(width, width, 3, padding=1),
        nn.SiLU(),
        nn.Conv2d(width, 1, 3, padding=1),
    )


class SDEstimator(nn.Module):
    """Shadow and depth maps from the feature pyramid, both sigmoid-bounded."""

    def __init__(self, tap_shapes: list[tuple[int, int]], image_size: int, width: int = 64):
        super().__init__()
        self.tap_shapes = [tuple(s) for s in tap_shapes]
        self.image_size = image_size
        self.width = width
        self.fusion = _TapFusion(self.tap_shapes, image_size, width)
        self.shadow_head = _map_head(width)
        self.depth_head = _map_head(width)

    def forward(self, taps: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
        fused = self.fusion(taps)
        return torch.sigmoid(self.shadow_head(fused)), torch.sigmoid(self.depth_head(fused))


class IDEstimator(nn.Module):
    """Unit-length identity embedding from the feature pyramid."""

    def __init__(
        self,
        tap_shapes: list[tuple[int, int]],
        image_size: int,
        width: int = 64,
        embedding_dim: int = 128,
    ):
        super().__init__()
        self.tap_shapes = [tuple(s) for s in tap_shapes]
        self.image_size = image_size
        self.width = width
        self.embedding_dim = embedding_dim
        self.fusion = _TapFusion(self.tap_shapes, image_size, width)
        self.head = nn.Sequential(
            nn.GroupNorm(_groups_for(width), width),
            nn.Conv2d(width, width, 3, padding=1),
            nn.SiLU(),
            nn.GroupNorm(_groups_for(width), width),
            nn.Conv2d(width, width, 3, padding=1),
            nn.SiLU(),
        )
        self.proj = nn.Linear(width, embedding_dim)

    def forward(self, taps: list[torch.Tensor]) -> torch.Tensor:
        fused = self.fusion(taps)
        h = self.head(fused).mean(dim=(2, 3))
        emb = self.proj(h)
        return F.normalize(emb, dim=-1)


class RGBShadowEstimator(nn.Module):
    """Shadow/depth readout from decoded RGB images (latent-vs-RGB ablation)."""

    def __init__(self, image_size: int, width: int = 64):
        super().__init__()
        self.image_size = image_size
        self.width = width
        self.stem = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(width, width, 3, padding=1),
            nn.SiLU(),
        )
        self.shadow_head = _map_head(width)
        self.depth_head = _map_head(width)

    def forward(self, rgb: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.stem(rgb)
        return torch.sigmoid(self.shadow_head(h)), torch.sigmoid(self.depth_head(h))


# ---- functional wrappers ----------------------------------------------------


def sd_estimate(estimator: SDEstimator, pyramid: FeaturePyramid) -> tuple[ShadowMap, DepthMap]:
    """Single-sample shadow/depth estimate as package map types (detached)."""
    shadow, depth = estimator(pyramid.taps)
    return (
        ShadowMap(shadow[0, 0].detach().double().numpy()),
        DepthMap(depth[0, 0].detach().double().numpy()),
    )


def id_embed(estimator: IDEstimator, pyramid: FeaturePyramid) -> torch.Tensor:
    """Single-sample unit-length identity embedding (1 x D)."""
    return estimator(pyramid.taps)


def cosine_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return 1.0 - (a * b).sum(dim=-1)


def triplet_loss(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negative: torch.Tensor,
    margin: float = 0.5,
) -> torch.Tensor:
    """Hinge on cosine distances: max(0, d(a,p) - d(a,n) + margin)."""
    for name, emb in (("anchor", anchor), ("positive", positive), ("negative", negative)):
        norms = emb.norm(dim=-1)
        if not torch.allclose(norms, torch.ones_like(norms), atol=1e-4):
            raise ValueError(f"{name} embedding is not unit-normalized")
    return torch.clamp(cosine_distance(anchor, positive) - cosine_distance(anchor, negative) + margin, min=0.0).mean()


# ---- persistence --------------------------------------------------------------


def save_estimator(path: str | Path, estimator: nn.Module, backbone_hash: str, meta: dict) -> None:
    if isinstance(estimator, SDEstimator):
        kind, arch = "sd", {
            "tap_shapes": estimator.tap_shapes,
            "image_size": estimator.image_size,
            "width": estimator.width,
        }
    elif isinstance(estimator, IDEstimator):
        kind, arch = "id", {
            "tap_shapes": estimator.tap_shapes,
            "image_size": estimator.image_size,
            "width": estimator.width,
            "embedding_dim": estimator.embedding_dim,
        }
    elif isinstance(estimator, RGBShadowEstimator):
        kind, arch = "rgb", {"image_size": estimator.image_size, "width": estimator.width}
    else:
        raise TypeError(f"unknown estimator type {type(estimator)!r}")
    payload = {
        "format_version": ESTIMATOR_FORMAT_VERSION,
        "kind": kind,
        "arch": arch,
        "state_dict": estimator.state_dict(),
        "backbone_hash": backbone_hash,
        "meta": meta,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_estimator(path: str | Path, backend: DiffusionBackend | None = None) -> nn.Module:
    """Load an estimator; refuses to pair with a different backbone than it was trained on."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"estimator checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != ESTIMATOR_FORMAT_VERSION:
        raise CheckpointError(f"unsupported estimator format {payload.get('format_version')}")
    if backend is not None and payload["backbone_hash"] != backend.checkpoint_hash():
        raise CheckpointError(
            "estimator was trained against a different diffusion checkpoint "
            f"(expected {payload['backbone_hash'][:12]}..., backend has "
            f"{backend.checkpoint_hash()[:12]}...)"
        )
    arch = payload["arch"]
    kind = payload["kind"]
    if kind == "sd":
        est: nn.Module = SDEstimator(**arch)
    elif kind == "id":
        est = IDEstimator(**arch)
    elif kind == "rgb":
        est = RGBShadowEstimator(**arch)
    else:
        raise CheckpointError(f"unknown estimator kind {kind!r}")
    est.load_state_dict(payload["state_dict"])
    est.eval()
    return est


# ---- feature sources -------------------------------------------------------------


def output_tap_shapes(backend: DiffusionBackend) -> list[tuple[int, int]]:
    """Pyramid layout when the feature source is the UNet's eps output."""
    return [(backend.model.config.in_channels, backend.image_size)]


def pyramid_from_source(
    backend: DiffusionBackend, x_t: torch.Tensor, t: int | torch.Tensor, source: str, grad: bool = False
) -> FeaturePyramid:
    """Features for the chosen source: internal taps or the raw eps output."""
    if source == "internal":
        return backend.features_at(x_t, t, grad=grad)
    if source == "output":
        eps = backend.eps_at(x_t, t, grad=grad)
        return FeaturePyramid([eps], t=t)
    raise ValueError(f"unknown feature source {source!r}")


# ---- data plumbing shared by the trainers -------------------------------------------


class _CorpusCache:
    """All images of a manifest in model domain, with targets, loaded once."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        images, shadows, depths, labels = [], [], [], []
        for idx in range(manifest.n_samples):
            sample = manifest.load_sample(idx)
            images.append(DiffusionBackend.encode(sample.image))
            shadows.append(torch.from_numpy(sample.shadow.grid).float()[None, None])
            depths.append(torch.from_numpy(sample.depth.grid).float()[None, None])
            labels.append(sample.identity_id)
        self.images = torch.cat(images, dim=0)
        self.shadows = torch.cat(shadows, dim=0)
        self.depths = torch.cat(depths, dim=0)
        self.labels = torch.tensor(labels, dtype=torch.long)
        self.train = list(manifest.train)
        self.val = list(manifest.val)

    def by_identity(self, indices: list[int]) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = {}
        for idx in indices:
            groups.setdefault(int(self.labels[idx]), []).append(idx)
        return groups


def constant_baseline_l1(corpus: _CorpusCache) -> dict[str, float]:
    """Val L1 of the constant predictor that outputs the train-split mean value."""
    eval_split = corpus.val or corpus.train
    out = {}
    for name, maps in (("shadow", corpus.shadows), ("depth", corpus.depths)):
        const = maps[corpus.train].mean()
        out[name] = float((maps[eval_split] - const).abs().mean())
    return out


def _noised_pyramids(
    backend: DiffusionBackend,
    corpus: _CorpusCache,
    indices: torch.Tensor,
    gen: torch.Generator,
    t_range: tuple[int, int],
    source: str,
) -> tuple[FeaturePyramid, torch.Tensor]:
    x0 = corpus.images[indices]
    t = torch.randint(t_range[0], t_range[1], (len(indices),), generator=gen)
    noise = torch.randn(x0.shape, generator=gen)
    ab = torch.from_numpy(backend.schedule.alpha_bar.astype(np.float32))[t]
    x_t = ab.sqrt()[:, None, None, None] * x0 + (1.0 - ab).sqrt()[:, None, None, None] * noise
    return pyramid_from_source(backend, x_t, t, source), t


# ---- shadow-depth training ---------------------------------------------------------


def validate_sd_estimator(
    estimator: nn.Module,
    backend: DiffusionBackend,
    corpus: _CorpusCache,
    source: str = "internal",
    t: int = VAL_TIMESTEP,
    seed: int = 1234,
) -> dict[str, float]:
    """Val-split shadow/depth L1 at a fixed low-noise timestep with seeded noise."""
    estimator.eval()
    gen = torch.Generator().manual_seed(seed)
    indices = corpus.val or corpus.train
    shadow_err, depth_err = [], []
    with torch.no_grad():
        for start in range(0, len(indices), 16):
            chunk = indices[start : start + 16]
            x0 = corpus.images[chunk]
            noise = torch.randn(x0.shape, generator=gen)
            x_t = backend.add_noise(x0, t, noise)
            if source == "rgb":
                rgb = _predicted_rgb(backend, x_t, t)
                shadow, depth = estimator(rgb)
            else:
                pyramid = pyramid_from_source(backend, x_t, t, source)
                shadow, depth = estimator(pyramid.taps)
            shadow_err.append((shadow - corpus.shadows[chunk]).abs().mean(dim=(1, 2, 3)))
            depth_err.append((depth - corpus.depths[chunk]).abs().mean(dim=(1, 2, 3)))
    return {
        "shadow_l1": float(torch.cat(shadow_err).mean()),
        "depth_l1": float(torch.cat(depth_err).mean()),
    }


def train_sd_estimator(
    manifest: DatasetManifest,
    diffusion_checkpoint: str | Path,
    config: EstimatorTrainConfig,
    out_path: str | Path,
    feature_source: str = "internal",
    log=None,
) -> dict:
    """Train the shadow-depth readout against a frozen denoiser.

    Each iteration noises clean images at uniformly sampled timesteps, taps
    features, and minimizes L1(shadow) + L1(depth). The denoiser's weights
    are hash-checked to be untouched.
    """
    backend = DiffusionBackend.load_checkpoint(diffusion_checkpoint)
    backbone_hash = backend.checkpoint_hash()
    corpus = _CorpusCache(manifest)

    torch.manual_seed(config.seed)
    if feature_source == "internal":
        estimator = SDEstimator(backend.model.config.tap_shapes, backend.image_size, config.fused_channels)
    elif feature_source == "output":
        estimator = SDEstimator(output_tap_shapes(backend), backend.image_size, config.fused_channels)
    else:
        raise ValueError(f"unknown feature source {feature_source!r}")
    optimizer = torch.optim.Adam(estimator.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    scheduler = config.make_scheduler(optimizer)

    started = time.time()
    steps_per_epoch = max(1, len(corpus.train) // config.batch_size)
    gen = torch.Generator().manual_seed(config.seed)
    val_history = []
    for epoch in range(config.max_epochs):
        estimator.train()
        for _ in range(steps_per_epoch):
            idx = torch.tensor(corpus.train)[torch.randint(0, len(corpus.train), (config.batch_size,), generator=gen)]
            pyramid, _ = _noised_pyramids(backend, corpus, idx, gen, config.t_range, feature_source)
            shadow, depth = estimator(pyramid.taps)
            loss = (shadow - corpus.shadows[idx]).abs().mean() + (depth - corpus.depths[idx]).abs().mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        scheduler.step()
        metrics = validate_sd_estimator(estimator, backend, corpus, feature_source)
        val_history.append(metrics)
        if log is not None:
            log(
                f"sd epoch {epoch + 1}/{config.max_epochs} "
                f"val shadow L1 {metrics['shadow_l1']:.4f} depth L1 {metrics['depth_l1']:.4f}"
            )

    if backend.checkpoint_hash() != backbone_hash:
        raise RuntimeError("denoiser weights changed during estimator training")

    baselines = constant_baseline_l1(corpus)
    meta = {
        "train_config": config.to_dict(),
        "feature_source": feature_source,
        "val_history": val_history,
        "baselines": baselines,
        "train_seconds": time.time() - started,
    }
    save_estimator(out_path, estimator, backbone_hash, meta)
    return {"checkpoint": str(out_path), "val": val_history[-1], "baselines": baselines, "meta": meta}


def _predicted_rgb(backend: DiffusionBackend, x_t: torch.Tensor, t, grad: bool = False) -> torch.Tensor:
    """Noisy RGB decode: predicted x0 from the unconditional eps, in [0, 1] domain."""
    eps = backend.eps_at(x_t, t, grad=grad)
    if torch.is_tensor(t):
        ab = torch.from_numpy(backend.schedule.alpha_bar.astype(np.float32))[t][:, None, None, None]
        x0 = (x_t - (1.0 - ab).sqrt() * eps) / ab.sqrt()
    else:
        x0 = backend.schedule.predict_x0(x_t, eps, t)
    return (x0 + 1.0) / 2.0


def train_rgb_estimator(
    manifest: DatasetManifest,
    diffusion_checkpoint: str | Path,
    config: EstimatorTrainConfig,
    out_path: str | Path,
    log=None,
) -> dict:
    """Train the RGB-space readout on predicted-x0 decodes (ablation variant)."""
    backend = DiffusionBackend.load_checkpoint(diffusion_checkpoint)
    backbone_hash = backend.checkpoint_hash()
    corpus = _CorpusCache(manifest)

    torch.manual_seed(config.seed)
    estimator = RGBShadowEstimator(backend.image_size)
    optimizer = torch.optim.Adam(estimator.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    scheduler = config.make_scheduler(optimizer)

    steps_per_epoch = max(1, len(corpus.train) // config.batch_size)
    gen = torch.Generator().manual_seed(config.seed)
    val_history = []
    for epoch in range(config.max_epochs):
        estimator.train()
        for _ in range(steps_per_epoch):
            idx = torch.tensor(corpus.train)[torch.randint(0, len(corpus.train), (config.batch_size,), generator=gen)]
            x0 = corpus.images[idx]
            t = torch.randint(config.t_range[0], config.t_range[1], (len(idx),), generator=gen)
            noise = torch.randn(x0.shape, generator=gen)
            ab = torch.from_numpy(backend.schedule.alpha_bar.astype(np.float32))[t]
            x_t = ab.sqrt()[:, None, None, None] * x0 + (1.0 - ab).sqrt()[:, None, None, None] * noise
            rgb = _predicted_rgb(backend, x_t, t)
            shadow, depth = estimator(rgb)
            loss = (shadow - corpus.shadows[idx]).abs().mean() + (depth - corpus.depths[idx]).abs().mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        scheduler.step()
        metrics = validate_sd_estimator(estimator, backend, corpus, "rgb")
        val_history.append(metrics)
        if log is not None:
            log(f"rgb epoch {epoch + 1}/{config.max_epochs} val shadow L1 {metrics['shadow_l1']:.4f}")

    meta = {"train_config": config.to_dict(), "feature_source": "rgb", "val_history": val_history}
    save_estimator(out_path, estimator, backbone_hash, meta)
    return {"checkpoint": str(out_path), "val": val_history[-1], "meta": meta}


# ---- identity training -----------------------------------------------------------


def _draw_triplet(groups: dict[int, list[int]], gen: torch.Generator) -> tuple[int, int, int] | None:
    eligible = [i for i, members in groups.items() if len(members) >= 2]
    if len(eligible) < 1 or len(groups) < 2:
        return None
    anchor_id = eligible[int(torch.randint(0, len(eligible), (1,), generator=gen))]
    members = groups[anchor_id]
    pick = torch.randperm(len(members), generator=gen)[:2]
    anchor, positive = members[int(pick[0])], members[int(pick[1])]
    other_ids = [i for i in groups if i != anchor_id]
    negative_id = other_ids[int(torch.randint(0, len(other_ids), (1,), generator=gen))]
    negatives = groups[negative_id]
    negative = negatives[int(torch.randint(0, len(negatives), (1,), generator=gen))]
    return anchor, positive, negative


def _embed_indices(
    backend: DiffusionBackend,
    estimator: IDEstimator,
    corpus: _CorpusCache,
    indices: list[int],
    gen: torch.Generator,
    t_range: tuple[int, int],
    grad: bool = False,
) -> torch.Tensor:
    """Embed samples, each with its own timestep and noise draw."""
    x0 = corpus.images[indices]
    t = torch.randint(t_range[0], t_range[1], (len(indices),), generator=gen)
    noise = torch.randn(x0.shape, generator=gen)
    ab = torch.from_numpy(backend.schedule.alpha_bar.astype(np.float32))[t]
    x_t = ab.sqrt()[:, None, None, None] * x0 + (1.0 - ab).sqrt()[:, None, None, None] * noise
    pyramid = backend.features_at(x_t, t, grad=False)
    if grad:
        return estimator(pyramid.taps)
    with torch.no_grad():
        return estimator(pyramid.taps)


def triplet_accuracy(
    estimator: IDEstimator,
    backend: DiffusionBackend,
    corpus: _CorpusCache,
    n_triplets: int = 200,
    seed: int = 4321,
    t_max: int = TRIPLET_EVAL_T_MAX,
) -> float:
    """Held-out sweep: fraction of val triplets with positive closer than negative.

    Each element is independently noised with its own timestep drawn from
    [0, t_max); past roughly half the schedule the signal is gone and no
    readout could succeed, so the sweep covers the informative range.
    """
    estimator.eval()
    gen = torch.Generator().manual_seed(seed)
    groups = corpus.by_identity(corpus.val or corpus.train)
    correct = total = 0
    for _ in range(n_triplets):
        triplet = _draw_triplet(groups, gen)
        if triplet is None:
            break
        emb = _embed_indices(backend, estimator, corpus, list(triplet), gen, (0, t_max))
        d_pos = cosine_distance(emb[0:1], emb[1:2])
        d_neg = cosine_distance(emb[0:1], emb[2:3])
        correct += int(d_pos.item() < d_neg.item())
        total += 1
    return correct / total if total else float("nan")


def identity_cluster_stats(
    estimator: IDEstimator,
    backend: DiffusionBackend,
    corpus: _CorpusCache,
    seed: int = 987,
    t_max: int = TRIPLET_EVAL_T_MAX,
) -> dict[str, float]:
    """Mean intra- vs inter-identity cosine similarity on the val split."""
    gen = torch.Generator().manual_seed(seed)
    groups = corpus.by_identity(corpus.val or corpus.train)
    embeddings = {}
    for ident, members in groups.items():
        embeddings[ident] = _embed_indices(backend, estimator, corpus, members, gen, (0, t_max))
    intra, inter = [], []
    idents = sorted(embeddings)
    for ident in idents:
        emb = embeddings[ident]
        sims = emb @ emb.T
        n = emb.shape[0]
        if n > 1:
            intra.append(((sims.sum() - n) / (n * (n - 1))).item())
    for i, a in enumerate(idents):
        for b in idents[i + 1 :]:
            inter.append((embeddings[a] @ embeddings[b].T).mean().item())
    return {
        "intra_cosine": float(np.mean(intra)) if intra else float("nan"),
        "inter_cosine": float(np.mean(inter)) if inter else float("nan"),
    }


def train_id_estimator(
    manifest: DatasetManifest,
    diffusion_checkpoint: str | Path,
    config: EstimatorTrainConfig,
    out_path: str | Path,
    log=None,
) -> dict:
    """Train the identity readout with (anchor, same-id/other-light, other-id) triplets.

    Every triplet element is noised independently (own timestep, own noise);
    identities with a single lighting cannot anchor and are skipped with a
    warning. The denoiser stays frozen.
    """
    backend = DiffusionBackend.load_checkpoint(diffusion_checkpoint)
    backbone_hash = backend.checkpoint_hash()
    corpus = _CorpusCache(manifest)

    groups = corpus.by_identity(corpus.train)
    singles = [i for i, members in groups.items() if len(members) < 2]
    if singles:
        warnings.warn(
            f"{len(singles)} identities have a single lighting and cannot serve as anchors",
            stacklevel=2,
        )
    if len(groups) - len(singles) < 1 or len(groups) < 2:
        raise ValueError("identity training needs >= 2 identities with >= 2 lightings for anchors")

    torch.manual_seed(config.seed)
    estimator = IDEstimator(
        backend.model.config.tap_shapes,
        backend.image_size,
        config.fused_channels,
        config.embedding_dim,
    )
    optimizer = torch.optim.Adam(estimator.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    scheduler = config.make_scheduler(optimizer)

    started = time.time()
    steps_per_epoch = max(1, len(corpus.train) // 3)
    gen = torch.Generator().manual_seed(config.seed)
    history = []
    for epoch in range(config.max_epochs):
        estimator.train()
        for _ in range(steps_per_epoch):
            triplet = _draw_triplet(groups, gen)
            emb = _embed_indices(backend, estimator, corpus, list(triplet), gen, config.t_range, grad=True)
            loss = triplet_loss(emb[0:1], emb[1:2], emb[2:3], config.margin)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        scheduler.step()
        accuracy = triplet_accuracy(estimator, backend, corpus)
        history.append({"triplet_accuracy": accuracy})
        if log is not None:
            log(f"id epoch {epoch + 1}/{config.max_epochs} val triplet accuracy {accuracy:.3f}")

    if backend.checkpoint_hash() != backbone_hash:
        raise RuntimeError("denoiser weights changed during estimator training")

    meta = {
        "train_config": config.to_dict(),
        "val_history": history,
        "train_seconds": time.time() - started,
    }
    save_estimator(out_path, estimator, backbone_hash, meta)
    return {"checkpoint": str(out_path), "val": history[-1], "meta": meta}
