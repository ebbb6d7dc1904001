import { describe, expect, it } from 'vitest';

import { clampSliceIndex, mmToPixel, mmToSliceIndex, pixelToMm } from '../src/coords.js';
import type { VolumeInfo } from '../src/types.js';

const vol: VolumeInfo = {
  id: 'v1',
  dims: [32, 32, 64],
  spacing_mm: [3.5, 3.5, 3.5],
  origin_mm: [-56.0, -56.0, -112.0],
  channels: ['CT', 'PET'],
};

describe('pixelToMm', () => {
  it('maps the pixel of voxel (i, j) to the voxel center', () => {
    // x_mm = ox + (i + 0.5) * sx — the half-voxel convention
    const p = pixelToMm(vol, 4, 7, 10);
    expect(p.x_mm).toBeCloseTo(-56.0 + 4.5 * 3.5, 12);
    expect(p.y_mm).toBeCloseTo(-56.0 + 7.5 * 3.5, 12);
    expect(p.z_mm).toBeCloseTo(-112.0 + 10.5 * 3.5, 12);
  });

  it('round trips through mmToPixel', () => {
    for (const [px, py] of [[0, 0], [13, 5], [31, 31]] as const) {
      const p = pixelToMm(vol, px, py, 3);
      const back = mmToPixel(vol, p.x_mm, p.y_mm);
      expect(back.px).toBeCloseTo(px, 10);
      expect(back.py).toBeCloseTo(py, 10);
    }
  });

  it('recovers the slice index from z_mm', () => {
    const p = pixelToMm(vol, 0, 0, 42);
    expect(mmToSliceIndex(vol, p.z_mm)).toBe(42);
  });
});

describe('clampSliceIndex', () => {
  it('clamps beyond-range slider values into the volume', () => {
    expect(clampSliceIndex(vol, -5)).toBe(0);
    expect(clampSliceIndex(vol, 63)).toBe(63);
    expect(clampSliceIndex(vol, 64)).toBe(63);
    expect(clampSliceIndex(vol, 1e9)).toBe(63);
  });
});
