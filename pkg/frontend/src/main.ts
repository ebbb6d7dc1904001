/** Bootstrap: wire the slice browser, curve panel and controls together. */

import { CurveRegApi } from './api.js';
import { ControlsModel, describeError } from './controls.js';
import { drawProjection, seriesFor } from './curve-panel.js';
import { SliceBrowser } from './slice-browser.js';
import {
  activeVolume,
  afterSave,
  documentToSave,
  hasUnsavedPoints,
  initialState,
  placePoint,
  removeNearestPending,
  setSlice,
  visitId,
  type ViewState,
} from './state.js';
import type { FitResponse } from './types.js';

const api = new CurveRegApi('');
let state: ViewState = initialState();
let controls: ControlsModel | null = null;

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
};

function banner(text: string): void {
  const box = el<HTMLDivElement>('banner');
  box.textContent = text;
  box.style.display = text ? 'block' : 'none';
}

function setState(next: ViewState): void {
  state = next;
  render();
}

let browser: SliceBrowser | null = null;

function render(): void {
  const vol = activeVolume(state);
  if (!vol) {
    return;
  }
  el<HTMLInputElement>('z-slider').max = String(vol.dims[2] - 1);
  el<HTMLInputElement>('z-slider').value = String(state.zIndex);
  el<HTMLSpanElement>('z-label').textContent = `z = ${state.zIndex}`;
  el<HTMLSpanElement>('visit-label').textContent = `${visitId(state)} (${state.activeVisit})`;
  el<HTMLSpanElement>('pending-label').textContent = hasUnsavedPoints(state)
    ? `${state.pending.length} unsaved point(s)`
    : '';
  browser?.render(state);
  renderCurves();
}

function renderCurves(): void {
  const curveId = el<HTMLInputElement>('curve-id').value;
  const fits: { src?: FitResponse; tgt?: FitResponse; aligned?: FitResponse } = {
    src: state.fits['src'],
    tgt: state.fits['tgt'],
    aligned: state.fits['aligned'],
  };
  const series = seriesFor(curveId, fits);
  for (const axis of ['x', 'y'] as const) {
    const canvas = el<HTMLCanvasElement>(`curve-${axis}`);
    const ctx = canvas.getContext('2d');
    if (ctx) {
      drawProjection(ctx, series, axis, canvas.width, canvas.height);
    }
  }
}

async function refreshFit(role: 'src' | 'tgt'): Promise<void> {
  const vol = role === 'src' ? state.srcVolume : state.tgtVolume;
  if (!vol) {
    return;
  }
  try {
    const fit = await api.fit(vol.id);
    setState({ ...state, fits: { ...state.fits, [role]: fit } });
  } catch (err) {
    banner(describeError(err));
  }
}

async function saveAnnotations(): Promise<void> {
  const doc = documentToSave(state);
  try {
    await api.putAnnotations(doc.visit_id, doc);
    setState(afterSave(state, doc));
    await refreshFit(state.activeVisit);
    banner('');
  } catch (err) {
    banner(describeError(err));
  }
}

async function boot(): Promise<void> {
  const volumes = await api.listVolumes();
  if (volumes.length < 1) {
    banner('no volumes in the data directory');
    return;
  }
  const src = volumes[0];
  const tgt = volumes.length > 1 ? volumes[1] : volumes[0];
  state = { ...initialState(), srcVolume: src, tgtVolume: tgt, zIndex: Math.floor(src.dims[2] / 2) };

  for (const [role, vol] of [['src', src], ['tgt', tgt]] as const) {
    try {
      const doc = await api.getAnnotations(vol.id);
      state = { ...state, saved: { ...state.saved, [vol.id]: doc } };
      await refreshFit(role);
    } catch {
      // visit not annotated yet
    }
  }

  browser = new SliceBrowser(el<HTMLCanvasElement>('slice'), api, {
    onPlace: (px, py) => setState(placePoint(state, px, py)),
    onRemove: (px, py) => setState(removeNearestPending(state, px, py)),
  });

  controls = new ControlsModel(api, src.id, tgt.id);
  controls.subscribe((snap) => {
    el<HTMLSpanElement>('score-label').textContent = snap.scoreText;
    el<HTMLSpanElement>('job-label').textContent =
      snap.jobState === 'idle' ? '' : `${snap.jobState} ${(snap.jobProgress * 100).toFixed(0)}%`;
    if (snap.banner) {
      banner(snap.banner);
    }
    if (snap.alignedVolumeId && snap.alignedVolumeId !== state.alignedVolumeId) {
      setState({ ...state, alignedVolumeId: snap.alignedVolumeId });
      void api.fit(snap.alignedVolumeId).then(
        (fit) => setState({ ...state, fits: { ...state.fits, aligned: fit } }),
        () => undefined,
      );
    }
  });

  el<HTMLInputElement>('z-slider').addEventListener('input', (ev) =>
    setState(setSlice(state, Number((ev.target as HTMLInputElement).value))),
  );
  el<HTMLInputElement>('alpha-slider').addEventListener('input', (ev) =>
    setState({ ...state, alpha: Number((ev.target as HTMLInputElement).value) }),
  );
  el<HTMLInputElement>('curve-id').addEventListener('change', (ev) =>
    setState({ ...state, activeCurveId: (ev.target as HTMLInputElement).value }),
  );
  el<HTMLSelectElement>('visit-select').addEventListener('change', (ev) =>
    setState({ ...state, activeVisit: (ev.target as HTMLSelectElement).value as 'src' | 'tgt' }),
  );
  el<HTMLButtonElement>('save-btn').addEventListener('click', () => void saveAnnotations());
  el<HTMLButtonElement>('score-btn').addEventListener('click', () => void controls?.refreshScore());
  el<HTMLButtonElement>('register-btn').addEventListener('click', () =>
    void controls?.startRegistration(),
  );

  window.addEventListener('beforeunload', (ev) => {
    if (hasUnsavedPoints(state)) {
      ev.preventDefault();
    }
  });

  render();
}

void boot().catch((err) => banner(describeError(err)));
