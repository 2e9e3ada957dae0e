import { describe, expect, it } from 'vitest';

import { MaskEditor, maskToRgba, rgbaToMask } from '../src/mask_editor.js';
import { base64PngToMask, maskToBase64Png } from '../src/mask_png.js';

describe('MaskEditor', () => {
  it('exports the empty mask when nothing was drawn', () => {
    const editor = new MaskEditor(32);
    expect(editor.paintedFraction()).toBe(0);
    expect([...editor.toGrid()].every((v) => v === 0)).toBe(true);
  });

  it('fill paints every pixel', () => {
    const editor = new MaskEditor(32);
    editor.fill();
    expect(editor.paintedFraction()).toBe(1);
  });

  it('stamps a disc of roughly the brush area', () => {
    const editor = new MaskEditor(32);
    editor.stamp(16, 16, 5);
    const painted = editor.paintedFraction() * 32 * 32;
    expect(painted).toBeGreaterThan(Math.PI * 25 * 0.7);
    expect(painted).toBeLessThan(Math.PI * 25 * 1.3);
    expect(editor.get(16, 16)).toBe(1);
    expect(editor.get(0, 0)).toBe(0);
  });

  it('erase mode removes paint', () => {
    const editor = new MaskEditor(32);
    editor.fill();
    editor.stamp(16, 16, 4, 'erase');
    expect(editor.get(16, 16)).toBe(0);
    expect(editor.get(0, 0)).toBe(1);
  });

  it('strokes connect their points without gaps', () => {
    const editor = new MaskEditor(32);
    editor.applyStroke({
      points: [
        { x: 4, y: 4 },
        { x: 28, y: 4 },
      ],
      radius: 2,
      mode: 'paint',
    });
    for (let x = 5; x < 27; x++) {
      expect(editor.get(x, 4)).toBe(1);
    }
  });
});

describe('mask PNG round-trip', () => {
  it('export -> re-import is pixel-identical', () => {
    const editor = new MaskEditor(32);
    editor.applyStroke({
      points: [
        { x: 3, y: 3 },
        { x: 20, y: 28 },
        { x: 29, y: 6 },
      ],
      radius: 3,
      mode: 'paint',
    });
    const grid = editor.toGrid();
    const restored = base64PngToMask(maskToBase64Png(grid, 32), 32);
    expect([...restored]).toEqual([...grid]);
  });

  it('full and empty masks survive the trip', () => {
    for (const fill of [0, 1]) {
      const grid = new Uint8Array(32 * 32).fill(fill);
      const restored = base64PngToMask(maskToBase64Png(grid, 32), 32);
      expect([...restored]).toEqual([...grid]);
    }
  });

  it('rgba conversion matches the service threshold rule', () => {
    const grid = new Uint8Array([1, 0, 0, 1]);
    const rgba = maskToRgba(grid, 2);
    expect(rgba[0]).toBe(255);
    expect(rgba[4]).toBe(0);
    expect([...rgbaToMask(rgba, 2)]).toEqual([1, 0, 0, 1]);
  });
});
