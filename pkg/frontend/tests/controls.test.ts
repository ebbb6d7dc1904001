import { describe, expect, it, vi } from 'vitest';

import type { CurveRegApi } from '../src/api.js';
import { ControlsModel } from '../src/controls.js';
import type { JobStatus, ScoreResponse } from '../src/types.js';

function fakeApi(overrides: Partial<Record<keyof CurveRegApi, unknown>> = {}): CurveRegApi {
  const score: ScoreResponse = {
    rmse_mm: 3.0871728093808117,
    per_curve: {},
    skipped: [],
    n_samples: 64,
  };
  const statuses: JobStatus[] = [
    { job_id: 'j1', state: 'queued', progress: 0, result: null, error: null },
    { job_id: 'j1', state: 'running', progress: 0.5, result: null, error: null },
    {
      job_id: 'j1',
      state: 'done',
      progress: 1,
      result: {
        registration: { affine: { linear: [], translation: [] }, tps: null },
        aligned_volume_id: 'visit1_aligned_visit2',
      },
      error: null,
    },
  ];
  let call = 0;
  return {
    score: vi.fn(async () => score),
    register: vi.fn(async () => ({ job_id: 'j1' })),
    jobStatus: vi.fn(async () => statuses[Math.min(call++, statuses.length - 1)]),
    ...overrides,
  } as unknown as CurveRegApi;
}

describe('ControlsModel.refreshScore', () => {
  it('displays the response RMSE verbatim, no rounding', async () => {
    const api = fakeApi();
    const model = new ControlsModel(api, 'visit1', 'visit2');
    await model.refreshScore();
    const snap = model.current();
    expect(snap.score?.rmse_mm).toBe(3.0871728093808117);
    expect(snap.scoreText).toBe(`${String(3.0871728093808117)} mm`);
  });
});

describe('ControlsModel.startRegistration', () => {
  it('walks the job through queued -> running -> done', async () => {
    const api = fakeApi();
    const model = new ControlsModel(api, 'visit1', 'visit2');
    const seen: string[] = [];
    model.subscribe((snap) => {
      if (seen[seen.length - 1] !== snap.jobState) {
        seen.push(snap.jobState);
      }
    });
    await model.startRegistration();
    expect(seen).toEqual(['idle', 'queued', 'running', 'done']);
    expect(model.current().alignedVolumeId).toBe('visit1_aligned_visit2');
    // the completed job refreshes the score with the result transform
    expect(api.score).toHaveBeenCalledWith(
      'visit1',
      'visit2',
      expect.objectContaining({ affine: expect.anything() }),
    );
  });

  it('shows "job already running" on 409', async () => {
    const api = fakeApi({
      register: vi.fn(async () => {
        throw { status: 409, error: 'JobRunning', message: 'busy' };
      }),
    });
    const model = new ControlsModel(api, 'visit1', 'visit2');
    await model.startRegistration();
    expect(model.current().banner).toBe('job already running');
    expect(model.current().jobState).toBe('idle');
  });

  it('surfaces job failure', async () => {
    const api = fakeApi({
      jobStatus: vi.fn(async (): Promise<JobStatus> => ({
        job_id: 'j1', state: 'failed', progress: 0.2, result: null, error: 'boom',
      })),
    });
    const model = new ControlsModel(api, 'visit1', 'visit2');
    await model.startRegistration();
    expect(model.current().jobState).toBe('failed');
    expect(model.current().banner).toContain('boom');
  });
});
