"""Independent fine-step ray-march oracle for shadow verification.

Scalar per-pixel marching (numba-compiled) with its own bilinear sampler,
structurally unrelated to the vectorized production caster. Also reports the
occlusion margin min(ray_z - terrain) along each pixel's track so borderline
disagreements can be attributed to discretization rather than geometry.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _bilinear(grid, x, y):
    h, w = grid.shape
    jf = x * w - 0.5
    if jf < 0.0:
        jf = 0.0
    elif jf > w - 1.0:
        jf = w - 1.0
    yf = y * h - 0.5
    if yf < 0.0:
        yf = 0.0
    elif yf > h - 1.0:
        yf = h - 1.0
    j0 = int(jf)
    if j0 > w - 2:
        j0 = w - 2
    i0 = int(yf)
    if i0 > h - 2:
        i0 = h - 2
    fx = jf - j0
    fy = yf - i0
    top = grid[i0, j0] * (1.0 - fx) + grid[i0, j0 + 1] * fx
    bot = grid[i0 + 1, j0] * (1.0 - fx) + grid[i0 + 1, j0 + 1] * fx
    return top * (1.0 - fy) + bot * fy


@njit(cache=True)
def _march_all(grid, lx, ly, lz, step_cells, bias):
    h, w = grid.shape
    shadow = np.ones((h, w))
    margin = np.full((h, w), np.inf)
    cell = 1.0 / max(h, w)
    step = step_cells * cell
    max_h = grid.max()
    for i in range(h):
        for j in range(w):
            x0 = (j + 0.5) / w
            y0 = (i + 0.5) / h
            z0 = grid[i, j] + bias
            dx = lx - x0
            dy = ly - y0
            horiz = math.hypot(dx, dy)
            if horiz <= 1e-12:
                continue
            ux = dx / horiz
            uy = dy / horiz
            slope = (lz - z0) / horiz
            s = step
            m = np.inf
            while s < horiz:
                x = x0 + s * ux
                y = y0 + s * uy
                if x < 0.0 or x > 1.0 or y < 0.0 or y > 1.0:
                    break
                z = z0 + s * slope
                if z > max_h:
                    break
                terrain = _bilinear(grid, x, y)
                clearance = z - terrain
                if clearance < m:
                    m = clearance
                if terrain > z:
                    shadow[i, j] = 0.0
                    break
                s += step
            margin[i, j] = m
    return shadow, margin


def fine_step_shadow(depth_grid: np.ndarray, light_xyz, step_cells: float = 0.01, bias: float = 1e-3):
    """Exhaustive-march shadow map plus per-pixel occlusion margins."""
    grid = np.ascontiguousarray(depth_grid, dtype=np.float64)
    lx, ly, lz = (float(v) for v in light_xyz)
    return _march_all(grid, lx, ly, lz, step_cells, bias)
