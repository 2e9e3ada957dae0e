"""Heightfield ray casting and mask-based shadow editing.

The scene model is a heightfield over the unit square: a depth map assigns
every pixel an elevation in [0, 1], the light is a point strictly above the
terrain, and a pixel is shadowed when the straight ray from its surface point
to the light passes below interpolated terrain somewhere along the way.

Conventions used throughout the package:
  * shadow maps: 1.0 = fully lit, 0.0 = fully shadowed
  * pixel (i, j) of an H x W grid sits at ((j + 0.5) / W, (i + 0.5) / H)
  * off-grid terrain heights are bilinearly interpolated (clamp-to-edge)
  * rays leaving the unit square terminate lit
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class RaycastError(ValueError):
    """Invalid input to a shadow operation (bad light, NaN depth, shapes)."""


def _as_grid(values, name: str) -> np.ndarray:
    grid = np.asarray(values, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 2 or grid.shape[1] < 2:
        raise RaycastError(f"{name} must be a 2D grid with H,W >= 2, got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise RaycastError(f"{name} contains non-finite values")
    return grid


@dataclass(frozen=True)
class DepthMap:
    """Elevation grid over the unit square; 1 = highest, closest to the light hemisphere."""

    grid: np.ndarray

    def __post_init__(self):
        grid = _as_grid(self.grid, "depth")
        if grid.min() < 0.0 or grid.max() > 1.0:
            raise RaycastError("depth values must lie in [0, 1]")
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape


@dataclass(frozen=True)
class ShadowMap:
    """Per-pixel lighting occupancy: 1 = fully lit, 0 = fully shadowed."""

    grid: np.ndarray

    def __post_init__(self):
        grid = _as_grid(self.grid, "shadow")
        object.__setattr__(self, "grid", np.clip(grid, 0.0, 1.0))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape


@dataclass(frozen=True)
class BinaryMask:
    """User mask; 1 marks the region to be shadowed."""

    grid: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 2:
            raise RaycastError(f"mask must be 2D, got shape {grid.shape}")
        if not np.all((grid == 0.0) | (grid == 1.0)):
            raise RaycastError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape


@dataclass(frozen=True)
class LightPosition:
    """Point light in scene units; (x, y) may lie outside the unit square, z is elevation."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.x, self.y, self.z)):
            raise RaycastError("light coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class RaycastConfig:
    """Marching parameters.

    step_length is a fraction of one grid cell travelled horizontally per
    sample; occlusion_bias lifts the ray origin off the surface to avoid
    self-shadow acne.
    """

    step_length: float = 0.5
    occlusion_bias: float = 1e-3
    interpolation: str = field(default="bilinear")

    def __post_init__(self):
        if self.step_length <= 0.0:
            raise RaycastError("step_length must be > 0")
        if self.occlusion_bias < 0.0:
            raise RaycastError("occlusion_bias must be >= 0")
        if self.interpolation != "bilinear":
            raise RaycastError(f"unsupported interpolation {self.interpolation!r}")


def sample_height(grid: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear terrain height at continuous unit-square coordinates (clamp-to-edge)."""
    h, w = grid.shape
    jf = np.clip(x * w - 0.5, 0.0, w - 1.0)
    if_ = np.clip(y * h - 0.5, 0.0, h - 1.0)
    j0 = np.minimum(jf.astype(np.int64), w - 2)
    i0 = np.minimum(if_.astype(np.int64), h - 2)
    fx = jf - j0
    fy = if_ - i0
    top = grid[i0, j0] * (1.0 - fx) + grid[i0, j0 + 1] * fx
    bot = grid[i0 + 1, j0] * (1.0 - fx) + grid[i0 + 1, j0 + 1] * fx
    return top * (1.0 - fy) + bot * fy


def raycast_shadow(depth: DepthMap, light: LightPosition, cfg: RaycastConfig | None = None) -> ShadowMap:
    """Cast hard shadows over a depth map from a point light.

    Marches from every surface point toward the light in fixed horizontal
    steps of ``cfg.step_length`` grid cells; a pixel is shadowed as soon as
    interpolated terrain rises above the ray. Rays leaving the unit square,
    reaching the light's horizontal position, or climbing above the terrain
    maximum terminate lit. Deterministic for fixed inputs.
    """
    cfg = cfg or RaycastConfig()
    grid = depth.grid
    h, w = grid.shape
    max_h = grid.max()
    if light.z <= 1.0 or light.z <= max_h + cfg.occlusion_bias:
        raise RaycastError(
            f"light z={light.z} must exceed 1 and the terrain maximum {max_h:.4f} plus bias"
        )

    xs = (np.arange(w, dtype=np.float64) + 0.5) / w
    ys = (np.arange(h, dtype=np.float64) + 0.5) / h
    px, py = np.meshgrid(xs, ys)
    px = px.ravel()
    py = py.ravel()
    pz = grid.ravel() + cfg.occlusion_bias

    dx = light.x - px
    dy = light.y - py
    horiz = np.hypot(dx, dy)

    lit = np.ones(px.shape[0], dtype=bool)
    # Rays with no horizontal travel are vertical and cannot hit a heightfield.
    active = np.flatnonzero(horiz > 1e-12)
    ux = dx[active] / horiz[active]
    uy = dy[active] / horiz[active]
    slope = (light.z - pz[active]) / horiz[active]
    ax, ay, az = px[active], py[active], pz[active]
    ah = horiz[active]

    step = cfg.step_length / max(h, w)
    k = 1
    while active.size:
        s = k * step
        sx = ax + s * ux
        sy = ay + s * uy
        sz = az + s * slope

        done_lit = (sx < 0.0) | (sx > 1.0) | (sy < 0.0) | (sy > 1.0) | (s >= ah) | (sz > max_h)
        inside = ~done_lit
        if inside.any():
            occluded = np.zeros_like(done_lit)
            occluded[inside] = sample_height(grid, sx[inside], sy[inside]) > sz[inside]
            lit[active[occluded]] = False
            keep = ~(done_lit | occluded)
        else:
            keep = ~done_lit
        active = active[keep]
        ax, ay, az = ax[keep], ay[keep], az[keep]
        ux, uy = ux[keep], uy[keep]
        slope, ah = slope[keep], ah[keep]
        k += 1

    return ShadowMap(lit.astype(np.float64).reshape(h, w))


def apply_shadow_mask(shadow: ShadowMap, mask: BinaryMask, darkness: float) -> ShadowMap:
    """Darken the masked region of a shadow map by a factor in [0, 1]."""
    if shadow.shape != mask.shape:
        raise RaycastError(f"shape mismatch: shadow {shadow.shape} vs mask {mask.shape}")
    if not (0.0 <= darkness <= 1.0):
        raise RaycastError(f"darkness must lie in [0, 1], got {darkness}")
    out = np.where(mask.grid == 1.0, shadow.grid * (1.0 - darkness), shadow.grid)
    return ShadowMap(out)
