"""Compact conditional UNet for 32x32 pixel-space denoising.

Three resolutions (32 / 16 / 8) with residual blocks and additive
time-plus-label embeddings. Five internal activations are exposed as the
feature pyramid read by the downstream estimators: encoder at 32 and 16,
bottleneck at 8, decoder at 16 and 32. Every nonlinearity is smooth (SiLU,
GroupNorm, sigmoid-free) so finite-difference gradient checks against the
input stay well-conditioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class UNetConfig:
    image_size: int = 32
    in_channels: int = 3
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 4)
    emb_dim: int = 128
    num_classes: int = 200  # label indices; num_classes itself is the null label

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "in_channels": self.in_channels,
            "base_channels": self.base_channels,
            "channel_mults": list(self.channel_mults),
            "emb_dim": self.emb_dim,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "UNetConfig":
        data = dict(data)
        data["channel_mults"] = tuple(data["channel_mults"])
        return cls(**data)

    @property
    def tap_shapes(self) -> list[tuple[int, int]]:
        """(channels, resolution) of each pyramid tap, encoder to decoder order."""
        s = self.image_size
        c1 = self.base_channels * self.channel_mults[0]
        c2 = self.base_channels * self.channel_mults[1]
        c3 = self.base_channels * self.channel_mults[2]
        return [(c1, s), (c2, s // 2), (c3, s // 4), (c2, s // 2), (c1, s)]


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / (half - 1)
    )
    args = t[:, None].to(freqs.dtype) * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def _groups(channels: int) -> int:
    return min(8, channels)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class SmallUNet(nn.Module):
    """Epsilon predictor with label conditioning and feature taps."""

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        c = config.base_channels
        c1, c2, c3 = (c * m for m in config.channel_mults)
        e = config.emb_dim

        self.time_mlp = nn.Sequential(nn.Linear(e, e), nn.SiLU(), nn.Linear(e, e))
        # The null label adds exactly nothing (masked out below) and real rows
        # start at zero, so a label only influences predictions once training
        # has actually observed it.
        self.label_emb = nn.Embedding(config.num_classes, e)
        nn.init.zeros_(self.label_emb.weight)

        self.stem = nn.Conv2d(config.in_channels, c1, 3, padding=1)
        self.enc1 = ResBlock(c1, c1, e)
        self.down1 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.enc2 = ResBlock(c2, c2, e)
        self.down2 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)
        self.mid1 = ResBlock(c3, c3, e)
        self.mid2 = ResBlock(c3, c3, e)
        self.up1 = nn.Conv2d(c3, c2, 3, padding=1)
        self.dec2 = ResBlock(c2 * 2, c2, e)
        self.up2 = nn.Conv2d(c2, c1, 3, padding=1)
        self.dec1 = ResBlock(c1 * 2, c1, e)
        self.out_norm = nn.GroupNorm(_groups(c1), c1)
        self.out_conv = nn.Conv2d(c1, config.in_channels, 3, padding=1)

    @property
    def null_label(self) -> int:
        return self.config.num_classes

    def forward(
        self, x: torch.Tensor, t: torch.Tensor, label: torch.Tensor, return_features: bool = False
    ):
        """Predict eps; optionally also return the five-tap feature pyramid."""
        dtype = self.stem.weight.dtype
        emb = self.time_mlp(timestep_embedding(t.to(dtype), self.config.emb_dim))
        is_null = label == self.null_label
        safe = label.clamp(max=self.config.num_classes - 1)
        emb = emb + self.label_emb(safe) * (~is_null).to(dtype)[:, None]

        h1 = self.enc1(self.stem(x), emb)
        h2 = self.enc2(self.down1(h1), emb)
        h3 = self.mid2(self.mid1(self.down2(h2), emb), emb)
        u2 = self.up1(F.interpolate(h3, scale_factor=2, mode="nearest"))
        d2 = self.dec2(torch.cat([u2, h2], dim=1), emb)
        u1 = self.up2(F.interpolate(d2, scale_factor=2, mode="nearest"))
        d1 = self.dec1(torch.cat([u1, h1], dim=1), emb)
        eps = self.out_conv(F.silu(self.out_norm(d1)))

        if return_features:
            return eps, [h1, h2, h3, d2, d1]
        return eps, None
