/** Wire types mirrored from the service's JSON schemas (GET /schemas). */

export type ControlMode = 'mask' | 'directional_light';

export interface ControlPayload {
  mode: ControlMode;
  strength: number;
  mask_png_base64?: string;
  darkness?: number;
  light?: [number, number, number];
}

export interface Session {
  id: string;
  cond: number | null;
  seed: number;
  guidance: Record<string, unknown>;
  control: ControlPayload | null;
  created: string;
  updated: string;
}

export type JobState = 'queued' | 'running' | 'done' | 'failed';

export interface Job {
  id: string;
  session_id: string;
  state: JobState;
  progress: { step: number; total: number };
  result_dir: string | null;
  error: string | null;
}

export type ArtifactName =
  | 'result.png'
  | 'target_shadow.png'
  | 'est_shadow_before.png'
  | 'est_shadow_after.png'
  | 'est_depth.png'
  | 'trace.json'
  | 'config.json';

/** Widget-space light parameters; converted to scene coordinates on export. */
export interface LightWidgetState {
  azimuthDeg: number;
  elevationDeg: number;
  distance: number;
}

/** Everything the editor holds beyond the wire control. */
export interface ControlState {
  mode: ControlMode;
  strength: number;
  darkness: number;
  light: LightWidgetState;
  brushSize: number;
  overlays: { targetShadow: boolean; estimatedShadow: boolean; estimatedDepth: boolean };
  sessionId: string | null;
  activeJobId: string | null;
}
