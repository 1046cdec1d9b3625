import { afterEach, beforeEach, describe, expect, it, vi } from 'vitest';

import type { ApiClient, PreviewResult } from '../src/api';
import { ApiError } from '../src/api';
import { PlacementEditor } from '../src/editor';
import type { Job, PlaneSummary } from '../src/types';

const PLANE: PlaneSummary = { normal: [0, -1, 0], anchor: [0, 1, 3], extents: [2, 1] };

/** Recording fake of the ApiClient surface the editor uses. */
function fakeApi() {
  let version = 0;
  const placements: unknown[] = [];
  let previews = 0;
  const impl = {
    setRegion: async () => PLANE,
    setPlacement: async (_pid: string, controls: unknown) => {
      placements.push({ ...(controls as object) });
      version += 1;
      return { version };
    },
    fetchPreview: async (): Promise<PreviewResult> => {
      previews += 1;
      return { blob: new Blob(), version };
    },
    startRender: async (): Promise<Job> => ({ id: 'j1', kind: 'render', status: 'queued', progress: 0 }),
    getJob: async (): Promise<Job> => ({ id: 'j1', kind: 'render', status: 'done', progress: 1 }),
    getFrameCount: async () => ({ count: 24, state: 'rendered' }),
    outputFrameUrl: (pid: string, k: number) => `/out/${pid}/${k}`,
    stats: () => ({ placements, previews: () => previews }),
  };
  return impl;
}

function makeEditor(api: ReturnType<typeof fakeApi>) {
  return new PlacementEditor(api as unknown as ApiClient, 'p1', {
    meshPath: '/m/cube.obj',
    makePreviewUrl: () => `blob:${Math.random()}`,
  });
}

describe('placement editor', () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it('three rapid slider changes produce exactly one placement POST', async () => {
    const api = fakeApi();
    const editor = makeEditor(api);
    await editor.selectRegion([10, 10, 50, 50]);

    editor.setControls({ yaw_deg: 10 });
    await vi.advanceTimersByTimeAsync(80);
    editor.setControls({ yaw_deg: 20 });
    await vi.advanceTimersByTimeAsync(80);
    editor.setControls({ scale_mult: 0.5 });
    await vi.advanceTimersByTimeAsync(300);

    const { placements } = api.stats();
    expect(placements).toHaveLength(1);
    expect(placements[0]).toMatchObject({ yaw_deg: 20, scale_mult: 0.5 });
    expect(api.stats().previews()).toBe(1);
    expect(editor.getState().previewVersion).toBe(1);
  });

  it('controls are ignored until a region has been accepted', async () => {
    const api = fakeApi();
    const editor = makeEditor(api);
    editor.setControls({ yaw_deg: 90 });
    await vi.advanceTimersByTimeAsync(500);
    expect(api.stats().placements).toHaveLength(0);
    expect(editor.getState().controls.yaw_deg).toBe(0);
  });

  it('stale preview responses never overwrite newer ones', async () => {
    const api = fakeApi();
    const pending: Array<(r: PreviewResult) => void> = [];
    let version = 0;
    api.setPlacement = async () => ({ version: ++version });
    api.fetchPreview = () => new Promise<PreviewResult>((res) => pending.push(res));
    const editor = makeEditor(api);
    await editor.selectRegion([10, 10, 50, 50]);

    editor.setControls({ yaw_deg: 10 });
    await vi.advanceTimersByTimeAsync(300);
    editor.setControls({ yaw_deg: 20 });
    await vi.advanceTimersByTimeAsync(300);
    expect(pending).toHaveLength(2);

    // the second commit's preview arrives first
    pending[1]({ blob: new Blob(), version: 2 });
    await vi.advanceTimersByTimeAsync(0);
    const shown = editor.getState().previewUrl;
    expect(editor.getState().previewVersion).toBe(2);

    pending[0]({ blob: new Blob(), version: 1 });
    await vi.advanceTimersByTimeAsync(0);
    expect(editor.getState().previewVersion).toBe(2);
    expect(editor.getState().previewUrl).toBe(shown);
  });

  it('a completed render enables a scrubber covering all frames', async () => {
    const api = fakeApi();
    const statuses: Job[] = [
      { id: 'j1', kind: 'render', status: 'running', progress: 0.5 },
      { id: 'j1', kind: 'render', status: 'done', progress: 1 },
    ];
    api.getJob = async () => statuses.shift()!;
    const editor = makeEditor(api);
    await editor.selectRegion([10, 10, 50, 50]);
    editor.setControls({ yaw_deg: 5 });
    await vi.advanceTimersByTimeAsync(300);

    const run = editor.startRender();
    await vi.advanceTimersByTimeAsync(1000);
    await run;

    expect(editor.getState().scrubber).toEqual({ frameCount: 24, current: 0 });
    editor.setScrubberFrame(40);
    expect(editor.getState().scrubber!.current).toBe(23);
    expect(editor.scrubberFrameUrl()).toBe('/out/p1/23');
  });

  it('re-rendering resets the scrubber until the new job finishes', async () => {
    const api = fakeApi();
    const editor = makeEditor(api);
    await editor.selectRegion([10, 10, 50, 50]);
    editor.setControls({ yaw_deg: 5 });
    await vi.advanceTimersByTimeAsync(300);
    await editor.startRender();
    expect(editor.getState().scrubber).not.toBeNull();

    api.getJob = async () => ({ id: 'j2', kind: 'render', status: 'running', progress: 0.1 });
    void editor.startRender();
    await vi.advanceTimersByTimeAsync(0);
    expect(editor.getState().scrubber).toBeNull();
  });

  it('a failed job surfaces the server error', async () => {
    const api = fakeApi();
    api.getJob = async () => ({
      id: 'j1', kind: 'render', status: 'failed', progress: 0, error: 'render: bad frame',
    });
    const editor = makeEditor(api);
    await editor.selectRegion([10, 10, 50, 50]);
    editor.setControls({ yaw_deg: 5 });
    await vi.advanceTimersByTimeAsync(300);
    await editor.startRender();
    expect(editor.getState().error).toContain('bad frame');
    expect(editor.getState().scrubber).toBeNull();
  });

  it('a rejected region keeps the previous valid plane', async () => {
    const api = fakeApi();
    const editor = makeEditor(api);
    await editor.selectRegion([10, 10, 50, 50]);
    api.setRegion = async () => {
      throw new ApiError(422, 'invalid region: no valid depth');
    };
    await editor.selectRegion([0, 0, 1, 1]);
    const s = editor.getState();
    expect(s.plane).toEqual(PLANE);
    expect(s.box).toEqual([10, 10, 50, 50]);
    expect(s.error).toContain('no valid depth');
  });
});
