/**
 * Mask painting core: a binary grid with circular brush strokes.
 *
 * Deliberately DOM-free so the same logic drives the studio canvas and the
 * scripted/headless sessions. The grid resolution must equal the model's
 * image size; values are strictly 0 or 1 (the service thresholds mask PNGs
 * at 128, and we export 0 / 255).
 */

export type BrushMode = 'paint' | 'erase';

export interface Stroke {
  points: Array<{ x: number; y: number }>; // grid coordinates, may be fractional
  radius: number;
  mode: BrushMode;
}

export class MaskEditor {
  readonly size: number;
  private grid: Uint8Array;

  constructor(size: number) {
    if (!Number.isInteger(size) || size < 2) {
      throw new Error(`mask size must be an integer >= 2, got ${size}`);
    }
    this.size = size;
    this.grid = new Uint8Array(size * size);
  }

  clear(): void {
    this.grid.fill(0);
  }

  fill(): void {
    this.grid.fill(1);
  }

  /** Stamp a brush disc; fractional centers are fine. */
  stamp(x: number, y: number, radius: number, mode: BrushMode = 'paint'): void {
    const value = mode === 'paint' ? 1 : 0;
    const r2 = radius * radius;
    const i0 = Math.max(0, Math.floor(y - radius));
    const i1 = Math.min(this.size - 1, Math.ceil(y + radius));
    const j0 = Math.max(0, Math.floor(x - radius));
    const j1 = Math.min(this.size - 1, Math.ceil(x + radius));
    for (let i = i0; i <= i1; i++) {
      for (let j = j0; j <= j1; j++) {
        const dx = j + 0.5 - x;
        const dy = i + 0.5 - y;
        if (dx * dx + dy * dy <= r2) {
          this.grid[i * this.size + j] = value;
        }
      }
    }
  }

  /** Rasterize a full stroke: discs stamped densely along each segment. */
  applyStroke(stroke: Stroke): void {
    const { points, radius, mode } = stroke;
    if (points.length === 0) return;
    this.stamp(points[0].x, points[0].y, radius, mode);
    for (let k = 1; k < points.length; k++) {
      const a = points[k - 1];
      const b = points[k];
      const length = Math.hypot(b.x - a.x, b.y - a.y);
      const steps = Math.max(1, Math.ceil(length / Math.max(0.5, radius / 2)));
      for (let s = 1; s <= steps; s++) {
        const t = s / steps;
        this.stamp(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), radius, mode);
      }
    }
  }

  get(x: number, y: number): 0 | 1 {
    return this.grid[y * this.size + x] as 0 | 1;
  }

  /** Row-major {0,1} copy of the grid. */
  toGrid(): Uint8Array {
    return this.grid.slice();
  }

  loadGrid(grid: Uint8Array): void {
    if (grid.length !== this.size * this.size) {
      throw new Error(`grid length ${grid.length} != ${this.size * this.size}`);
    }
    for (const v of grid) {
      if (v !== 0 && v !== 1) throw new Error('mask grid must be strictly binary');
    }
    this.grid = grid.slice();
  }

  paintedFraction(): number {
    let sum = 0;
    for (const v of this.grid) sum += v;
    return sum / this.grid.length;
  }
}

/**
 * Draw the mask into ImageData-style RGBA bytes (white = masked), for canvas
 * rendering and for PNG export via a canvas in the browser.
 */
export function maskToRgba(grid: Uint8Array, size: number): Uint8ClampedArray {
  const rgba = new Uint8ClampedArray(size * size * 4);
  for (let p = 0; p < size * size; p++) {
    const v = grid[p] ? 255 : 0;
    rgba[p * 4] = v;
    rgba[p * 4 + 1] = v;
    rgba[p * 4 + 2] = v;
    rgba[p * 4 + 3] = 255;
  }
  return rgba;
}

/** RGBA bytes back to a binary grid using the service's >= 128 threshold. */
export function rgbaToMask(rgba: Uint8ClampedArray | Uint8Array, size: number): Uint8Array {
  if (rgba.length !== size * size * 4) {
    throw new Error(`rgba length ${rgba.length} != ${size * size * 4}`);
  }
  const grid = new Uint8Array(size * size);
  for (let p = 0; p < size * size; p++) {
    grid[p] = rgba[p * 4] >= 128 ? 1 : 0;
  }
  return grid;
}
