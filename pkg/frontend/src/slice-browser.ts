/** Slice browser: overlay raster with vector point markers on top.
 *
 * The raster is the server-rendered overlay PNG scaled to canvas pixels;
 * clicks map back through the same scale, so a click on a voxel's pixel
 * yields that voxel's center in mm. Saved points render solid, pending
 * ones hollow (unsaved work stays visually distinct).
 */

import type { CurveRegApi } from './api.js';
import { mmToPixel } from './coords.js';
import type { ViewState } from './state.js';
import { activeVolume, pointsOnSlice } from './state.js';

export interface SliceBrowserHooks {
  onPlace: (px: number, py: number) => void;
  onRemove: (px: number, py: number) => void;
}

export class SliceBrowser {
  private image = new Image();
  private scale = 1;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly api: CurveRegApi,
    private readonly hooks: SliceBrowserHooks,
  ) {
    canvas.addEventListener('click', (ev) => {
      const { px, py } = this.eventToVoxel(ev);
      this.hooks.onPlace(px, py);
    });
    canvas.addEventListener('contextmenu', (ev) => {
      ev.preventDefault();
      const { px, py } = this.eventToVoxel(ev);
      this.hooks.onRemove(px, py);
    });
  }

  private eventToVoxel(ev: MouseEvent): { px: number; py: number } {
    const rect = this.canvas.getBoundingClientRect();
    const cx = ((ev.clientX - rect.left) / rect.width) * this.canvas.width;
    const cy = ((ev.clientY - rect.top) / rect.height) * this.canvas.height;
    return { px: Math.floor(cx / this.scale), py: Math.floor(cy / this.scale) };
  }

  render(state: ViewState): void {
    const vol = activeVolume(state);
    if (!vol) {
      return;
    }
    const [nx, ny] = vol.dims;
    this.scale = Math.max(1, Math.floor(512 / Math.max(nx, ny)));
    this.canvas.width = nx * this.scale;
    this.canvas.height = ny * this.scale;
    const url = this.api.overlayUrl(vol.id, state.zIndex, state.alpha);
    const draw = () => this.drawMarkers(state);
    if (this.image.src.endsWith(url) && this.image.complete) {
      this.paint(state);
    } else {
      this.image = new Image();
      this.image.onload = () => this.paint(state);
      this.image.onerror = draw;
      this.image.src = url;
    }
  }

  private paint(state: ViewState): void {
    const ctx = this.canvas.getContext('2d');
    if (!ctx) {
      return;
    }
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.drawImage(this.image, 0, 0, this.canvas.width, this.canvas.height);
    this.drawMarkers(state);
  }

  private drawMarkers(state: ViewState): void {
    const ctx = this.canvas.getContext('2d');
    const vol = activeVolume(state);
    if (!ctx || !vol) {
      return;
    }
    for (const { point, pending } of pointsOnSlice(state)) {
      const { px, py } = mmToPixel(vol, point.x_mm, point.y_mm);
      const cx = (px + 0.5) * this.scale;
      const cy = (py + 0.5) * this.scale;
      ctx.beginPath();
      ctx.arc(cx, cy, 5, 0, 2 * Math.PI);
      ctx.lineWidth = 2;
      ctx.strokeStyle = pending ? '#ffb000' : '#30d030';
      if (!pending) {
        ctx.fillStyle = 'rgba(48, 208, 48, 0.5)';
        ctx.fill();
      }
      ctx.stroke();
    }
  }
}
