/**
 * Spherical light-position widget targeting the unit-square center.
 *
 * The scene convention: the heightfield spans [0,1] x [0,1] at elevations up
 * to 1, and a light must sit strictly above z = 1 to cast shadows. The
 * widget's elevation floor guarantees that for any allowed distance.
 */

import type { LightWidgetState } from './types.js';

export const MIN_DISTANCE = 1.5;
export const MAX_DISTANCE = 6.0;
export const MAX_ELEVATION_DEG = 90;

/** Smallest elevation (deg) that keeps z = d*sin(el) above 1.05 at distance d. */
export function elevationFloorDeg(distance: number): number {
  const d = clampDistance(distance);
  return (Math.asin(Math.min(1, 1.05 / d)) * 180) / Math.PI;
}

export function clampDistance(distance: number): number {
  return Math.min(MAX_DISTANCE, Math.max(MIN_DISTANCE, distance));
}

/** Clamps widget values into the legal region; reports whether anything moved. */
export function clampWidget(state: LightWidgetState): { state: LightWidgetState; clamped: boolean } {
  const distance = clampDistance(state.distance);
  const floor = elevationFloorDeg(distance);
  const elevationDeg = Math.min(MAX_ELEVATION_DEG, Math.max(floor, state.elevationDeg));
  const azimuthDeg = ((state.azimuthDeg % 360) + 360) % 360;
  const next = { azimuthDeg, elevationDeg, distance };
  const clamped =
    next.azimuthDeg !== state.azimuthDeg ||
    next.elevationDeg !== state.elevationDeg ||
    next.distance !== state.distance;
  return { state: next, clamped };
}

/** Widget state -> scene-space [x, y, z] aimed at the unit-square center. */
export function lightWidgetToControl(state: LightWidgetState): [number, number, number] {
  const { state: legal } = clampWidget(state);
  const az = (legal.azimuthDeg * Math.PI) / 180;
  const el = (legal.elevationDeg * Math.PI) / 180;
  const x = 0.5 + legal.distance * Math.cos(el) * Math.cos(az);
  const y = 0.5 + legal.distance * Math.cos(el) * Math.sin(az);
  const z = legal.distance * Math.sin(el);
  return [x, y, z];
}

/** Inverse mapping so a stored control JSON re-populates the widget. */
export function lightControlToWidget(light: [number, number, number]): LightWidgetState {
  const [x, y, z] = light;
  const dx = x - 0.5;
  const dy = y - 0.5;
  const horizontal = Math.hypot(dx, dy);
  const distance = Math.hypot(horizontal, z);
  const elevationDeg = (Math.atan2(z, horizontal) * 180) / Math.PI;
  const azimuthDeg = ((Math.atan2(dy, dx) * 180) / Math.PI + 360) % 360;
  return { azimuthDeg, elevationDeg, distance };
}
