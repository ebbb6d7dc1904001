/** Pixel <-> mm conversion, the single piece of numeric logic the UI owns.
 *
 * Slice images map one canvas pixel to one voxel. The world position of
 * voxel center (i, j) on slice z follows the volume's half-voxel
 * convention: origin + (index + 0.5) * spacing.
 */

import type { VolumeInfo } from './types.js';

export interface SlicePoint {
  x_mm: number;
  y_mm: number;
  z_mm: number;
}

export function pixelToMm(vol: VolumeInfo, px: number, py: number, zIndex: number): SlicePoint {
  const [sx, sy, sz] = vol.spacing_mm;
  const [ox, oy, oz] = vol.origin_mm;
  return {
    x_mm: ox + (px + 0.5) * sx,
    y_mm: oy + (py + 0.5) * sy,
    z_mm: oz + (zIndex + 0.5) * sz,
  };
}

export function mmToPixel(vol: VolumeInfo, x_mm: number, y_mm: number): { px: number; py: number } {
  const [sx, sy] = vol.spacing_mm;
  const [ox, oy] = vol.origin_mm;
  return { px: (x_mm - ox) / sx - 0.5, py: (y_mm - oy) / sy - 0.5 };
}

export function mmToSliceIndex(vol: VolumeInfo, z_mm: number): number {
  const sz = vol.spacing_mm[2];
  const oz = vol.origin_mm[2];
  return Math.round((z_mm - oz) / sz - 0.5);
}

export function clampSliceIndex(vol: VolumeInfo, z: number): number {
  const nz = vol.dims[2];
  return Math.min(Math.max(Math.round(z), 0), nz - 1);
}
