/**
 * Mask <-> base64 PNG in the service's wire format (8-bit, threshold 128).
 *
 * In the browser the studio exports through a canvas instead; this module is
 * the Node-side codec used by scripted sessions and tests.
 */

import { PNG } from 'pngjs';

import { rgbaToMask } from './mask_editor.js';

export function maskToBase64Png(grid: Uint8Array, size: number): string {
  if (grid.length !== size * size) {
    throw new Error(`grid length ${grid.length} != ${size * size}`);
  }
  const png = new PNG({ width: size, height: size });
  for (let p = 0; p < size * size; p++) {
    const v = grid[p] ? 255 : 0;
    png.data[p * 4] = v;
    png.data[p * 4 + 1] = v;
    png.data[p * 4 + 2] = v;
    png.data[p * 4 + 3] = 255;
  }
  return PNG.sync.write(png).toString('base64');
}

export function base64PngToMask(payload: string, expectedSize?: number): Uint8Array {
  const png = PNG.sync.read(Buffer.from(payload, 'base64'));
  if (expectedSize !== undefined && (png.width !== expectedSize || png.height !== expectedSize)) {
    throw new Error(`mask is ${png.width}x${png.height}, expected ${expectedSize}`);
  }
  if (png.width !== png.height) {
    throw new Error(`mask must be square, got ${png.width}x${png.height}`);
  }
  return rgbaToMask(new Uint8Array(png.data), png.width);
}
