/** Thin typed client over the service JSON API. */

import type {
  AnnotationDoc,
  ApiError,
  FitResponse,
  JobStatus,
  ScoreResponse,
  VolumeInfo,
} from './types.js';

async function asError(response: Response): Promise<ApiError> {
  let error = 'HttpError';
  let message = `${response.status} ${response.statusText}`;
  try {
    const body = await response.json();
    if (body && typeof body === 'object') {
      error = body.error ?? body.detail?.error ?? error;
      message = body.message ?? body.detail?.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return { status: response.status, error, message };
}

async function requestJson<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  if (!response.ok) {
    throw await asError(response);
  }
  return (await response.json()) as T;
}

export class CurveRegApi {
  constructor(private readonly base: string = '') {}

  listVolumes(): Promise<VolumeInfo[]> {
    return requestJson(`${this.base}/volumes`);
  }

  sliceUrl(volumeId: string, channel: string, z: number, window?: string): string {
    const params = new URLSearchParams({ channel, z: String(z) });
    if (window) params.set('window', window);
    return `${this.base}/volumes/${volumeId}/slice?${params}`;
  }

  overlayUrl(volumeId: string, z: number, alpha: number): string {
    const params = new URLSearchParams({ z: String(z), alpha: String(alpha) });
    return `${this.base}/volumes/${volumeId}/overlay?${params}`;
  }

  getAnnotations(visit: string): Promise<AnnotationDoc> {
    return requestJson(`${this.base}/annotations/${visit}`);
  }

  putAnnotations(visit: string, doc: AnnotationDoc): Promise<{ n_points: number }> {
    return requestJson(`${this.base}/annotations/${visit}`, {
      method: 'PUT',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(doc),
    });
  }

  fit(visit: string): Promise<FitResponse> {
    return requestJson(`${this.base}/fit`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ visit }),
    });
  }

  score(src: string, tgt: string, transform?: unknown): Promise<ScoreResponse> {
    return requestJson(`${this.base}/score`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(transform ? { src, tgt, transform } : { src, tgt }),
    });
  }

  register(src: string, tgt: string): Promise<{ job_id: string }> {
    return requestJson(`${this.base}/register`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ src, tgt }),
    });
  }

  jobStatus(jobId: string): Promise<JobStatus> {
    return requestJson(`${this.base}/jobs/${jobId}`);
  }
}
