import { describe, expect, it } from 'vitest';

import {
  afterSave,
  documentToSave,
  hasUnsavedPoints,
  initialState,
  placePoint,
  pointsOnSlice,
  removeNearestPending,
  setSlice,
} from '../src/state.js';
import type { AnnotationDoc, VolumeInfo } from '../src/types.js';

const vol: VolumeInfo = {
  id: 'visit1',
  dims: [32, 32, 64],
  spacing_mm: [3.5, 3.5, 3.5],
  origin_mm: [-56.0, -56.0, -112.0],
  channels: ['CT', 'PET'],
};

function stateWithVolume() {
  return { ...initialState(), srcVolume: vol, tgtVolume: vol, zIndex: 10, activeCurveId: 'c1' };
}

describe('placePoint', () => {
  it('stores the clicked voxel center in mm with the active curve id', () => {
    const s = placePoint(stateWithVolume(), 4, 7);
    expect(s.pending).toHaveLength(1);
    const p = s.pending[0];
    expect(p.curve_id).toBe('c1');
    expect(p.x_mm).toBeCloseTo(-56.0 + 4.5 * 3.5, 12);
    expect(p.y_mm).toBeCloseTo(-56.0 + 7.5 * 3.5, 12);
    expect(p.slice).toBe(10);
  });

  it('marks state as having unsaved points', () => {
    const s = placePoint(stateWithVolume(), 1, 1);
    expect(hasUnsavedPoints(s)).toBe(true);
  });
});

describe('removeNearestPending', () => {
  it('removes the nearest pending point on the current slice only', () => {
    let s = stateWithVolume();
    s = placePoint(s, 4, 4);
    s = placePoint(s, 20, 20);
    s = setSlice(s, 11);
    s = placePoint(s, 4, 4); // same pixel, different slice
    s = setSlice(s, 10);
    s = removeNearestPending(s, 5, 5);
    expect(s.pending).toHaveLength(2);
    // the slice-10 point at (20, 20) and the slice-11 point survive
    expect(s.pending.map((p) => p.slice)).toEqual([10, 11]);
  });

  it('does nothing when no pending point lives on the slice', () => {
    let s = placePoint(stateWithVolume(), 4, 4);
    s = setSlice(s, 40);
    expect(removeNearestPending(s, 4, 4).pending).toHaveLength(1);
  });
});

describe('setSlice', () => {
  it('clamps beyond-range values', () => {
    expect(setSlice(stateWithVolume(), 1000).zIndex).toBe(63);
    expect(setSlice(stateWithVolume(), -3).zIndex).toBe(0);
  });
});

describe('documentToSave / afterSave', () => {
  it('merges saved and pending points in placement order', () => {
    const saved: AnnotationDoc = {
      visit_id: 'visit1',
      points: [{ curve_id: 'c0', z_mm: 0, x_mm: 1, y_mm: 2, slice: 3 }],
    };
    let s = { ...stateWithVolume(), saved: { visit1: saved } };
    s = placePoint(s, 4, 7);
    const doc = documentToSave(s);
    expect(doc.visit_id).toBe('visit1');
    expect(doc.points).toHaveLength(2);
    expect(doc.points[0]).toEqual(saved.points[0]);

    const after = afterSave(s, doc);
    expect(after.pending).toHaveLength(0);
    expect(after.saved['visit1'].points).toHaveLength(2);
  });

  it('produces the exact annotation wire format', () => {
    let s = stateWithVolume();
    for (let i = 0; i < 5; i++) {
      s = placePoint(s, 4 + i, 7);
    }
    const doc = documentToSave(s);
    for (const p of doc.points) {
      expect(Object.keys(p).sort()).toEqual(['curve_id', 'slice', 'x_mm', 'y_mm', 'z_mm']);
      expect(typeof p.x_mm).toBe('number');
    }
  });
});

describe('pointsOnSlice', () => {
  it('distinguishes pending from saved points', () => {
    const saved: AnnotationDoc = {
      visit_id: 'visit1',
      points: [
        { curve_id: 'c0', z_mm: -112.0 + 10.5 * 3.5, x_mm: 0, y_mm: 0, slice: 10 },
      ],
    };
    let s = { ...stateWithVolume(), saved: { visit1: saved } };
    s = placePoint(s, 2, 2);
    const marks = pointsOnSlice(s);
    expect(marks).toHaveLength(2);
    expect(marks.map((m) => m.pending)).toEqual([false, true]);
  });
});
