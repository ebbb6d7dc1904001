/** Annotation view state: the visit pair, current slice, pending points.
 *
 * Pending (unsaved) points live only here until saved; saving merges them
 * with the persisted document and PUTs the result back. All geometry the
 * store performs is pixel<->mm conversion; distances for "remove nearest"
 * are in screen pixels because that is the gesture's frame of reference.
 */

import { clampSliceIndex, mmToPixel, mmToSliceIndex, pixelToMm } from './coords.js';
import type { AnnotationDoc, AnnotationPoint, FitResponse, ScoreResponse, VolumeInfo } from './types.js';

export interface ViewState {
  srcVolume: VolumeInfo | null;
  tgtVolume: VolumeInfo | null;
  activeVisit: 'src' | 'tgt';
  zIndex: number;
  alpha: number;
  activeCurveId: string;
  pending: AnnotationPoint[];
  saved: Record<string, AnnotationDoc>;
  fits: Record<string, FitResponse>;
  lastScore: ScoreResponse | null;
  alignedVolumeId: string | null;
}

export function initialState(): ViewState {
  return {
    srcVolume: null,
    tgtVolume: null,
    activeVisit: 'src',
    zIndex: 0,
    alpha: 0.5,
    activeCurveId: 'curve-01',
    pending: [],
    saved: {},
    fits: {},
    lastScore: null,
    alignedVolumeId: null,
  };
}

export function activeVolume(state: ViewState): VolumeInfo | null {
  return state.activeVisit === 'src' ? state.srcVolume : state.tgtVolume;
}

export function setSlice(state: ViewState, z: number): ViewState {
  const vol = activeVolume(state);
  return { ...state, zIndex: vol ? clampSliceIndex(vol, z) : 0 };
}

/** Left click on the slice canvas: record a pending point at the clicked
 * pixel, converted to mm with the volume's half-voxel convention. */
export function placePoint(state: ViewState, px: number, py: number): ViewState {
  const vol = activeVolume(state);
  if (!vol || !state.activeCurveId) {
    return state;
  }
  const p = pixelToMm(vol, px, py, state.zIndex);
  const point: AnnotationPoint = {
    curve_id: state.activeCurveId,
    z_mm: p.z_mm,
    x_mm: p.x_mm,
    y_mm: p.y_mm,
    slice: state.zIndex,
  };
  return { ...state, pending: [...state.pending, point] };
}

/** Right click: drop the nearest pending point on the current slice. */
export function removeNearestPending(state: ViewState, px: number, py: number): ViewState {
  const vol = activeVolume(state);
  if (!vol || state.pending.length === 0) {
    return state;
  }
  let bestIndex = -1;
  let bestDist = Infinity;
  state.pending.forEach((point, index) => {
    if (mmToSliceIndex(vol, point.z_mm) !== state.zIndex) {
      return;
    }
    const q = mmToPixel(vol, point.x_mm, point.y_mm);
    const d = (q.px - px) ** 2 + (q.py - py) ** 2;
    if (d < bestDist) {
      bestDist = d;
      bestIndex = index;
    }
  });
  if (bestIndex < 0) {
    return state;
  }
  const pending = state.pending.slice();
  pending.splice(bestIndex, 1);
  return { ...state, pending };
}

export function hasUnsavedPoints(state: ViewState): boolean {
  return state.pending.length > 0;
}

export function visitId(state: ViewState): string {
  const vol = activeVolume(state);
  return vol ? vol.id : '';
}

/** The exact document to persist: previously saved points plus pending
 * ones, in placement order. */
export function documentToSave(state: ViewState): AnnotationDoc {
  const visit = visitId(state);
  const existing = state.saved[visit]?.points ?? [];
  return { visit_id: visit, points: [...existing, ...state.pending] };
}

export function afterSave(state: ViewState, doc: AnnotationDoc): ViewState {
  return {
    ...state,
    pending: [],
    saved: { ...state.saved, [doc.visit_id]: doc },
  };
}

/** Points to draw on the current slice; pending ones are flagged so the
 * renderer can style them differently from saved ones. */
export function pointsOnSlice(
  state: ViewState,
): { point: AnnotationPoint; pending: boolean }[] {
  const vol = activeVolume(state);
  if (!vol) {
    return [];
  }
  const visit = visitId(state);
  const saved = (state.saved[visit]?.points ?? []).map((point) => ({ point, pending: false }));
  const pending = state.pending.map((point) => ({ point, pending: true }));
  return [...saved, ...pending].filter(
    ({ point }) => mmToSliceIndex(vol, point.z_mm) === state.zIndex,
  );
}
