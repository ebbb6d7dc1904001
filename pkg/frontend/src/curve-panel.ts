/** Curve plot: x(z) and y(z) projections with uncertainty bands.
 *
 * Source curves draw blue, target red, aligned (when a registration result
 * exists) green. Band half-widths come straight from the /fit response;
 * extrapolated regions are visibly wider because the server widens them.
 */

import type { BandSample, FitResponse } from './types.js';

export interface CurveSeries {
  label: string;
  color: string;
  samples: BandSample[];
  zMin: number;
  zMax: number;
}

export const SERIES_COLORS = { src: '#2060c0', tgt: '#c03030', aligned: '#208040' } as const;

/** Pick plottable series out of the fetched fits, one per visit role. */
export function seriesFor(
  curveId: string,
  fits: { src?: FitResponse; tgt?: FitResponse; aligned?: FitResponse },
): CurveSeries[] {
  const out: CurveSeries[] = [];
  for (const role of ['src', 'tgt', 'aligned'] as const) {
    const fit = fits[role];
    if (!fit || !(curveId in fit.curves) || !(curveId in fit.bands)) {
      continue;
    }
    out.push({
      label: role,
      color: SERIES_COLORS[role],
      samples: fit.bands[curveId],
      zMin: fit.curves[curveId].z_min_mm,
      zMax: fit.curves[curveId].z_max_mm,
    });
  }
  return out;
}

interface Extent {
  zLo: number;
  zHi: number;
  vLo: number;
  vHi: number;
}

function extent(series: CurveSeries[], axis: 'x' | 'y'): Extent {
  let zLo = Infinity;
  let zHi = -Infinity;
  let vLo = Infinity;
  let vHi = -Infinity;
  for (const s of series) {
    for (const b of s.samples) {
      const value = axis === 'x' ? b.x_mm : b.y_mm;
      const sigma = axis === 'x' ? b.sigma_x_mm : b.sigma_y_mm;
      zLo = Math.min(zLo, b.z_mm);
      zHi = Math.max(zHi, b.z_mm);
      vLo = Math.min(vLo, value - sigma);
      vHi = Math.max(vHi, value + sigma);
    }
  }
  const pad = 0.05 * (vHi - vLo || 1);
  return { zLo, zHi, vLo: vLo - pad, vHi: vHi + pad };
}

export function drawProjection(
  ctx: CanvasRenderingContext2D,
  series: CurveSeries[],
  axis: 'x' | 'y',
  width: number,
  height: number,
): void {
  ctx.clearRect(0, 0, width, height);
  if (series.length === 0) {
    return;
  }
  const e = extent(series, axis);
  const toX = (z: number) => ((z - e.zLo) / (e.zHi - e.zLo || 1)) * (width - 20) + 10;
  const toY = (v: number) => height - (((v - e.vLo) / (e.vHi - e.vLo || 1)) * (height - 20) + 10);

  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.fillStyle = s.color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    s.samples.forEach((b, i) => {
      const value = axis === 'x' ? b.x_mm : b.y_mm;
      if (i === 0) {
        ctx.moveTo(toX(b.z_mm), toY(value));
      } else {
        ctx.lineTo(toX(b.z_mm), toY(value));
      }
    });
    ctx.stroke();
    // error bars, thinner inside the fitted span than beyond it
    ctx.lineWidth = 0.75;
    ctx.globalAlpha = 0.7;
    for (const b of s.samples) {
      const value = axis === 'x' ? b.x_mm : b.y_mm;
      const sigma = axis === 'x' ? b.sigma_x_mm : b.sigma_y_mm;
      const cx = toX(b.z_mm);
      ctx.beginPath();
      ctx.moveTo(cx, toY(value - sigma));
      ctx.lineTo(cx, toY(value + sigma));
      ctx.stroke();
    }
    ctx.globalAlpha = 1.0;
  }
}
