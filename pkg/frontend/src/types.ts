/** Shared domain types mirroring the server's JSON payloads. */

export interface PlaneSummary {
  normal: [number, number, number];
  anchor: [number, number, number];
  extents: [number, number];
}

export interface PlacementControls {
  yaw_deg: number;
  scale_mult: number;
  dx: number;
  dz: number;
}

export interface Job {
  id: string;
  kind: string;
  status: 'queued' | 'running' | 'done' | 'failed';
  progress: number;
  error?: string;
}

/** Region box in image pixels, independent of canvas zoom. */
export type Box = [number, number, number, number];

export interface ScrubberState {
  frameCount: number;
  current: number;
}

export interface EditorState {
  projectId: string;
  frame: number;
  box: Box | null;
  plane: PlaneSummary | null;
  controls: PlacementControls;
  /** Version of the placement the displayed preview corresponds to. */
  previewVersion: number;
  previewUrl: string | null;
  placementCommitted: boolean;
  job: Job | null;
  scrubber: ScrubberState | null;
  error: string | null;
}

export const DEFAULT_CONTROLS: PlacementControls = {
  yaw_deg: 0,
  scale_mult: 1,
  dx: 0,
  dz: 0,
};

export function initialState(projectId: string): EditorState {
  return {
    projectId,
    frame: 0,
    box: null,
    plane: null,
    controls: { ...DEFAULT_CONTROLS },
    previewVersion: 0,
    previewUrl: null,
    placementCommitted: false,
    job: null,
    scrubber: null,
    error: null,
  };
}

/** Placement controls stay disabled until the server has fitted a plane. */
export function controlsEnabled(s: EditorState): boolean {
  return s.plane !== null;
}

/** Render stays disabled until a placement has been committed. */
export function renderEnabled(s: EditorState): boolean {
  return s.placementCommitted;
}
