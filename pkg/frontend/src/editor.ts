/** Editor core: wires region selection, debounced placement commits,
 * version-checked previews, and render jobs into one state object.
 *
 * Pure thin client: every plane, extent, and preview pixel shown comes
 * from a server response.
 */

import { ApiClient, ApiError } from './api';
import { debounce } from './debounce';
import { pollJob } from './jobs';
import {
  Box,
  EditorState,
  PlacementControls,
  controlsEnabled,
  initialState,
  renderEnabled,
} from './types';

export interface EditorOptions {
  meshPath: string;
  debounceMs?: number;
  pollIntervalMs?: number;
  /** Blob -> displayable URL; injectable so tests can avoid object URLs. */
  makePreviewUrl?: (blob: Blob) => string;
  onChange?: (state: EditorState) => void;
}

export class PlacementEditor {
  private state: EditorState;
  private latestCommittedVersion = 0;
  private scheduleCommit: (() => void) & { cancel(): void; flush(): void };

  constructor(
    private api: ApiClient,
    projectId: string,
    private opts: EditorOptions,
  ) {
    this.state = initialState(projectId);
    this.scheduleCommit = debounce(() => {
      void this.commit();
    }, opts.debounceMs ?? 250);
  }

  getState(): EditorState {
    return this.state;
  }

  private emit(): void {
    this.opts.onChange?.(this.state);
  }

  setFrame(k: number): void {
    this.state.frame = k;
    this.emit();
  }

  /** Drag result in image pixels; a failed fit keeps the previous plane. */
  async selectRegion(box: Box): Promise<void> {
    try {
      const plane = await this.api.setRegion(this.state.projectId, this.state.frame, box);
      this.state.box = box;
      this.state.plane = plane;
      this.state.placementCommitted = false;
      this.state.scrubber = null;
      this.state.error = null;
    } catch (err) {
      this.state.error = err instanceof ApiError ? err.message : String(err);
    }
    this.emit();
  }

  /** Control changes coalesce into one placement POST per debounce window. */
  setControls(delta: Partial<PlacementControls>): void {
    if (!controlsEnabled(this.state)) return;
    this.state.controls = { ...this.state.controls, ...delta };
    this.emit();
    this.scheduleCommit();
  }

  private async commit(): Promise<void> {
    try {
      const { version } = await this.api.setPlacement(
        this.state.projectId,
        this.state.controls,
        this.opts.meshPath,
      );
      this.latestCommittedVersion = version;
      this.state.placementCommitted = true;
      this.state.error = null;
      this.emit();
      await this.refreshPreview();
    } catch (err) {
      this.state.error = err instanceof ApiError ? err.message : String(err);
      this.emit();
    }
  }

  private async refreshPreview(): Promise<void> {
    let result;
    try {
      result = await this.api.fetchPreview(this.state.projectId, this.state.frame);
    } catch {
      // keep the prior preview; the error field drives a retry affordance
      this.state.error = 'preview failed';
      this.emit();
      return;
    }
    // discard stale responses: the displayed preview only moves forward
    if (result.version <= this.state.previewVersion) return;
    if (result.version < this.latestCommittedVersion) return;
    this.state.previewVersion = result.version;
    this.state.previewUrl = (this.opts.makePreviewUrl ?? defaultPreviewUrl)(result.blob);
    this.emit();
  }

  async startRender(): Promise<void> {
    if (!renderEnabled(this.state)) return;
    this.state.scrubber = null;
    this.state.error = null;
    try {
      const job = await this.api.startRender(this.state.projectId);
      this.state.job = job;
      this.emit();
      await pollJob(this.api, job.id, {
        intervalMs: this.opts.pollIntervalMs ?? 1000,
        onProgress: (j) => {
          this.state.job = j;
          this.emit();
        },
      });
      const { count } = await this.api.getFrameCount(this.state.projectId);
      this.state.scrubber = { frameCount: count, current: 0 };
    } catch (err) {
      this.state.error = err instanceof ApiError ? err.message : String(err);
    }
    this.emit();
  }

  setScrubberFrame(k: number): void {
    if (!this.state.scrubber) return;
    const max = this.state.scrubber.frameCount - 1;
    this.state.scrubber.current = Math.min(Math.max(k, 0), max);
    this.emit();
  }

  scrubberFrameUrl(): string | null {
    if (!this.state.scrubber) return null;
    return this.api.outputFrameUrl(this.state.projectId, this.state.scrubber.current);
  }
}

function defaultPreviewUrl(blob: Blob): string {
  return URL.createObjectURL(blob);
}
