/** View model for the score / register panel.
 *
 * Holds no DOM: callers subscribe to snapshots and render them. The
 * displayed RMSE is the verbatim number from the /score response; the only
 * transformation applied is String().
 */

import type { CurveRegApi } from './api.js';
import { pollJob } from './jobs.js';
import type { ApiError, JobState, ScoreResponse } from './types.js';

export interface ControlsSnapshot {
  scoreText: string;
  score: ScoreResponse | null;
  jobState: JobState | 'idle';
  jobProgress: number;
  alignedVolumeId: string | null;
  banner: string;
}

export class ControlsModel {
  private snapshot: ControlsSnapshot = {
    scoreText: '',
    score: null,
    jobState: 'idle',
    jobProgress: 0,
    alignedVolumeId: null,
    banner: '',
  };

  private listeners: ((s: ControlsSnapshot) => void)[] = [];

  constructor(
    private readonly api: CurveRegApi,
    private readonly src: string,
    private readonly tgt: string,
  ) {}

  subscribe(listener: (s: ControlsSnapshot) => void): void {
    this.listeners.push(listener);
    listener(this.snapshot);
  }

  current(): ControlsSnapshot {
    return this.snapshot;
  }

  private update(patch: Partial<ControlsSnapshot>): void {
    this.snapshot = { ...this.snapshot, ...patch };
    for (const listener of this.listeners) {
      listener(this.snapshot);
    }
  }

  /** Fetch the score; `transform` is the registration result when known. */
  async refreshScore(transform?: unknown): Promise<void> {
    try {
      const score = await this.api.score(this.src, this.tgt, transform);
      this.update({ score, scoreText: `${String(score.rmse_mm)} mm`, banner: '' });
    } catch (err) {
      this.update({ banner: describeError(err) });
    }
  }

  async startRegistration(): Promise<void> {
    if (this.snapshot.jobState === 'queued' || this.snapshot.jobState === 'running') {
      this.update({ banner: 'job already running' });
      return;
    }
    let jobId: string;
    try {
      const started = await this.api.register(this.src, this.tgt);
      jobId = started.job_id;
    } catch (err) {
      const apiErr = err as ApiError;
      this.update({
        banner: apiErr.status === 409 ? 'job already running' : describeError(err),
      });
      return;
    }
    this.update({ jobState: 'queued', jobProgress: 0, banner: '' });
    try {
      const final = await pollJob(this.api, jobId, (status) =>
        this.update({ jobState: status.state, jobProgress: status.progress }),
      );
      const result = final.result;
      this.update({ alignedVolumeId: result ? result.aligned_volume_id : null });
      await this.refreshScore(result ? result.registration : undefined);
    } catch (err) {
      this.update({ jobState: 'failed', banner: describeError(err) });
    }
  }
}

export function describeError(err: unknown): string {
  if (err && typeof err === 'object' && 'message' in err) {
    const e = err as { error?: string; message?: string };
    return e.error ? `${e.error}: ${e.message}` : String(e.message);
  }
  return String(err);
}
