/** Poll a job until it reaches a terminal state. */

import type { ApiClient } from './api';
import type { Job } from './types';

export interface PollOptions {
  intervalMs?: number;
  onProgress?: (job: Job) => void;
}

export function pollJob(
  api: ApiClient,
  jobId: string,
  { intervalMs = 1000, onProgress }: PollOptions = {},
): Promise<Job> {
  return new Promise((resolve, reject) => {
    let timer: ReturnType<typeof setInterval> | null = null;

    const poll = async () => {
      let job: Job;
      try {
        job = await api.getJob(jobId);
      } catch (err) {
        if (timer !== null) clearInterval(timer);
        reject(err);
        return;
      }
      onProgress?.(job);
      if (job.status === 'done') {
        if (timer !== null) clearInterval(timer);
        resolve(job);
      } else if (job.status === 'failed') {
        if (timer !== null) clearInterval(timer);
        reject(new Error(job.error ?? `${job.kind} job failed`));
      }
    };

    timer = setInterval(poll, intervalMs);
    void poll();
  });
}
