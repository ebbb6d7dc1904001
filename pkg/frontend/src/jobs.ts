/** Poll a registration job until it reaches a terminal state. */

import type { CurveRegApi } from './api.js';
import type { JobStatus } from './types.js';

export function pollJob(
  api: CurveRegApi,
  jobId: string,
  onUpdate: (status: JobStatus) => void,
  intervalMs = 500,
): Promise<JobStatus> {
  return new Promise((resolve, reject) => {
    const tick = async () => {
      let status: JobStatus;
      try {
        status = await api.jobStatus(jobId);
      } catch (err) {
        clearInterval(timer);
        reject(err);
        return;
      }
      onUpdate(status);
      if (status.state === 'done') {
        clearInterval(timer);
        resolve(status);
      } else if (status.state === 'failed') {
        clearInterval(timer);
        reject(new Error(status.error ?? 'registration failed'));
      }
    };
    const timer = setInterval(tick, intervalMs);
    void tick();
  });
}
