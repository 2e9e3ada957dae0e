/**
 * Studio page wiring: mask canvas, light widget, strength slider, job flow.
 *
 * The UI never computes shadows itself; every preview overlay is a fetched
 * artifact from the service. The "before" image of each comparison is the
 * strength-0 replay of the same seed. Jobs are enqueued only on explicit
 * button presses, and stale poll responses are discarded by job id.
 */

import { StudioApi } from './api.js';
import { MaskEditor, maskToRgba } from './mask_editor.js';
import { clampWidget, elevationFloorDeg, lightWidgetToControl } from './light_widget.js';
import type { ControlPayload, ControlState, Job } from './types.js';

const IMAGE_SIZE = 32;
const CANVAS_SCALE = 8;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export class StudioApp {
  private api: StudioApi;
  private editor = new MaskEditor(IMAGE_SIZE);
  private state: ControlState = {
    mode: 'mask',
    strength: 1.0,
    darkness: 1.0,
    light: { azimuthDeg: 180, elevationDeg: 35, distance: 2.5 },
    brushSize: 3,
    overlays: { targetShadow: true, estimatedShadow: false, estimatedDepth: false },
    sessionId: null,
    activeJobId: null,
  };
  private drawing = false;
  private beforeJobId: string | null = null;

  constructor(baseUrl: string) {
    this.api = new StudioApi(baseUrl);
  }

  async start(): Promise<void> {
    const health = await this.api.health();
    el<HTMLSpanElement>('health').textContent = health.checkpoints.estimators
      ? 'service ready'
      : 'service up (no estimators: previews only)';
    const session = await this.api.createSession({
      cond: Number(el<HTMLInputElement>('cond').value),
      seed: Number(el<HTMLInputElement>('seed').value),
    });
    this.state.sessionId = session.id;
    this.bindMaskCanvas();
    this.bindControls();
    this.renderMask();
    this.updateLightReadout();
  }

  private bindMaskCanvas(): void {
    const canvas = el<HTMLCanvasElement>('mask-canvas');
    canvas.width = IMAGE_SIZE * CANVAS_SCALE;
    canvas.height = IMAGE_SIZE * CANVAS_SCALE;
    const toGrid = (event: MouseEvent) => {
      const rect = canvas.getBoundingClientRect();
      return {
        x: ((event.clientX - rect.left) / rect.width) * IMAGE_SIZE,
        y: ((event.clientY - rect.top) / rect.height) * IMAGE_SIZE,
      };
    };
    canvas.addEventListener('mousedown', (event) => {
      this.drawing = true;
      const p = toGrid(event);
      this.editor.stamp(p.x, p.y, this.state.brushSize, event.shiftKey ? 'erase' : 'paint');
      this.renderMask();
    });
    canvas.addEventListener('mousemove', (event) => {
      if (!this.drawing) return;
      const p = toGrid(event);
      this.editor.stamp(p.x, p.y, this.state.brushSize, event.shiftKey ? 'erase' : 'paint');
      this.renderMask();
    });
    window.addEventListener('mouseup', () => {
      this.drawing = false;
    });
    el<HTMLButtonElement>('mask-clear').addEventListener('click', () => {
      this.editor.clear();
      this.renderMask();
    });
    el<HTMLButtonElement>('mask-fill').addEventListener('click', () => {
      this.editor.fill();
      this.renderMask();
    });
  }

  private bindControls(): void {
    const strength = el<HTMLInputElement>('strength');
    strength.addEventListener('input', () => {
      this.state.strength = Number(strength.value);
      el<HTMLSpanElement>('strength-value').textContent = strength.value;
    });
    el<HTMLSelectElement>('mode').addEventListener('change', (event) => {
      this.state.mode = (event.target as HTMLSelectElement).value as ControlState['mode'];
      el<HTMLDivElement>('mask-panel').hidden = this.state.mode !== 'mask';
      el<HTMLDivElement>('light-panel').hidden = this.state.mode !== 'directional_light';
    });
    for (const key of ['azimuth', 'elevation', 'distance'] as const) {
      el<HTMLInputElement>(key).addEventListener('input', () => this.updateLightReadout());
    }
    el<HTMLButtonElement>('generate').addEventListener('click', () => {
      void this.generate();
    });
  }

  private updateLightReadout(): void {
    const raw = {
      azimuthDeg: Number(el<HTMLInputElement>('azimuth').value),
      elevationDeg: Number(el<HTMLInputElement>('elevation').value),
      distance: Number(el<HTMLInputElement>('distance').value),
    };
    const { state, clamped } = clampWidget(raw);
    this.state.light = state;
    const [x, y, z] = lightWidgetToControl(state);
    el<HTMLSpanElement>('light-readout').textContent =
      `light (${x.toFixed(2)}, ${y.toFixed(2)}, ${z.toFixed(2)})` + (clamped ? ' [clamped]' : '');
    el<HTMLInputElement>('elevation').min = String(Math.ceil(elevationFloorDeg(state.distance)));
    el<HTMLInputElement>('elevation').classList.toggle('clamped', clamped);
  }

  private renderMask(): void {
    const canvas = el<HTMLCanvasElement>('mask-canvas');
    const ctx = canvas.getContext('2d')!;
    const rgba = new Uint8ClampedArray(maskToRgba(this.editor.toGrid(), IMAGE_SIZE));
    const small = new ImageData(rgba, IMAGE_SIZE, IMAGE_SIZE);
    const offscreen = document.createElement('canvas');
    offscreen.width = IMAGE_SIZE;
    offscreen.height = IMAGE_SIZE;
    offscreen.getContext('2d')!.putImageData(small, 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.drawImage(offscreen, 0, 0, canvas.width, canvas.height);
  }

  /** Export the painted mask through a canvas, in the service's PNG format. */
  private exportMaskBase64(): string {
    const canvas = document.createElement('canvas');
    canvas.width = IMAGE_SIZE;
    canvas.height = IMAGE_SIZE;
    const ctx = canvas.getContext('2d')!;
    const rgba = new Uint8ClampedArray(maskToRgba(this.editor.toGrid(), IMAGE_SIZE));
    ctx.putImageData(new ImageData(rgba, IMAGE_SIZE, IMAGE_SIZE), 0, 0);
    return canvas.toDataURL('image/png').split(',')[1];
  }

  private buildControl(strengthOverride?: number): ControlPayload {
    const strength = strengthOverride ?? this.state.strength;
    if (this.state.mode === 'mask') {
      return {
        mode: 'mask',
        mask_png_base64: this.exportMaskBase64(),
        darkness: this.state.darkness,
        strength,
      };
    }
    return { mode: 'directional_light', light: lightWidgetToControl(this.state.light), strength };
  }

  private async runJob(control: ControlPayload): Promise<Job> {
    const sessionId = this.state.sessionId!;
    await this.api.putControl(sessionId, control);
    const job = await this.api.enqueueJob(sessionId);
    this.state.activeJobId = job.id;
    for await (const update of this.api.pollJob(job.id)) {
      if (update.id !== this.state.activeJobId) continue; // stale poll
      el<HTMLSpanElement>('job-status').textContent =
        `${update.state} ${update.progress.step}/${update.progress.total}`;
      if (update.state === 'done' || update.state === 'failed') return update;
    }
    throw new Error('unreachable');
  }

  private async generate(): Promise<void> {
    const button = el<HTMLButtonElement>('generate');
    button.disabled = true;
    try {
      // Before image: strength-0 replay of the same seed (computed once per session).
      if (this.beforeJobId === null) {
        const before = await this.runJob(this.buildControl(0));
        if (before.state !== 'done') throw new Error(before.error ?? 'before-job failed');
        this.beforeJobId = before.id;
        el<HTMLImageElement>('before').src = this.api.artifactUrl(before.id, 'result.png');
      }
      const job = await this.runJob(this.buildControl());
      if (job.state !== 'done') throw new Error(job.error ?? 'job failed');
      el<HTMLImageElement>('after').src = this.api.artifactUrl(job.id, 'result.png');
      el<HTMLImageElement>('overlay-target').src = this.api.artifactUrl(job.id, 'target_shadow.png');
      el<HTMLImageElement>('overlay-shadow').src = this.api.artifactUrl(job.id, 'est_shadow_after.png');
      el<HTMLImageElement>('overlay-depth').src = this.api.artifactUrl(job.id, 'est_depth.png');
    } catch (error) {
      el<HTMLSpanElement>('job-status').textContent = String(error);
    } finally {
      button.disabled = false;
    }
  }
}

declare global {
  interface Window {
    studioApp?: StudioApp;
  }
}

if (typeof document !== 'undefined' && document.getElementById('mask-canvas')) {
  const app = new StudioApp(window.location.origin.replace(/:\d+$/, ':8000'));
  window.studioApp = app;
  void app.start();
}
