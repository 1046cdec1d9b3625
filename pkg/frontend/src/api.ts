/** Thin typed client over the pipeline service HTTP API.
 *
 * Every piece of geometry the UI shows comes back from these calls; the
 * client never computes planes, extents, or previews itself.
 */

import type { Box, Job, PlacementControls, PlaneSummary } from './types';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export interface PreviewResult {
  blob: Blob;
  version: number;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl = '',
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = await res.json();
        if (body.detail) detail = String(body.detail);
      } catch {
        // non-JSON error body, keep the status text
      }
      throw new ApiError(res.status, detail);
    }
    return res;
  }

  private async postJson(path: string, body: unknown): Promise<any> {
    const res = await this.request(path, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    return res.json();
  }

  async createProject(name: string, framesDir: string, flowDir: string): Promise<string> {
    const doc = await this.postJson('/api/projects', {
      name,
      frames_dir: framesDir,
      flow_dir: flowDir,
    });
    return doc.id;
  }

  async startReconstruct(projectId: string): Promise<Job> {
    const doc = await this.postJson(`/api/projects/${projectId}/reconstruct`, {});
    return doc.job;
  }

  async getJob(jobId: string): Promise<Job> {
    const res = await this.request(`/api/jobs/${jobId}`);
    return res.json();
  }

  async getFrameCount(projectId: string): Promise<{ count: number; state: string }> {
    const res = await this.request(`/api/projects/${projectId}/frames`);
    return res.json();
  }

  async setRegion(projectId: string, frame: number, box: Box): Promise<PlaneSummary> {
    const doc = await this.postJson(`/api/projects/${projectId}/region`, { frame, box });
    return doc.plane;
  }

  async setPlacement(
    projectId: string,
    controls: PlacementControls,
    meshPath: string,
  ): Promise<{ version: number }> {
    const doc = await this.postJson(`/api/projects/${projectId}/placement`, {
      yaw_deg: controls.yaw_deg,
      scale_mult: controls.scale_mult,
      planar_offset: [controls.dx, controls.dz],
      mesh_path: meshPath,
    });
    return { version: doc.version };
  }

  /** Composited preview plus the placement version it was rendered from. */
  async fetchPreview(projectId: string, frame: number): Promise<PreviewResult> {
    const res = await this.request(`/api/projects/${projectId}/preview?frame=${frame}`);
    const version = Number(res.headers.get('X-Preview-Version') ?? '0');
    return { blob: await res.blob(), version };
  }

  async startRender(projectId: string): Promise<Job> {
    const doc = await this.postJson(`/api/projects/${projectId}/render`, {});
    return doc.job;
  }

  frameUrl(projectId: string, k: number): string {
    return `${this.baseUrl}/api/projects/${projectId}/frame/${k}`;
  }

  outputFrameUrl(projectId: string, k: number): string {
    return `${this.baseUrl}/api/projects/${projectId}/out/${k}`;
  }
}
