/** Viewer interaction state and pure event reducers (unit-testable). */

import { CutState, FrameFilter } from "./render.js";

export interface ViewerState {
  azimuthDeg: number;
  elevationDeg: number;
  distance: number;
  target: [number, number, number];
  fovDeg: number;
  layerOn: boolean[];
  cut: CutState;
  sortEveryN: number; // re-sort cadence in frames (1 = every frame)
  background: [number, number, number];
}

export function initialState(layerCount: number): ViewerState {
  return {
    azimuthDeg: 30,
    elevationDeg: 25,
    distance: 2.6,
    target: [0, 0, 0],
    fovDeg: 50,
    layerOn: Array(Math.max(layerCount, 1)).fill(true),
    cut: { axis: 0, offset: 1.0, enabled: false,
           layerMask: Array(Math.max(layerCount, 1)).fill(true) },
    sortEveryN: 1,
    background: [0, 0, 0],
  };
}

const ORBIT_SPEED = 0.4; // degrees per pixel dragged

export function applyDrag(s: ViewerState, dxPixels: number,
                          dyPixels: number): ViewerState {
  const elevation = Math.max(-89, Math.min(89,
    s.elevationDeg + dyPixels * ORBIT_SPEED));
  return { ...s, azimuthDeg: s.azimuthDeg - dxPixels * ORBIT_SPEED,
           elevationDeg: elevation };
}

export function applyZoom(s: ViewerState, factor: number): ViewerState {
  return { ...s, distance: Math.max(0.05, s.distance * factor) };
}

export function toggleLayer(s: ViewerState, layer: number): ViewerState {
  const layerOn = s.layerOn.slice();
  layerOn[layer] = !layerOn[layer];
  return { ...s, layerOn };
}

/** True when every layer is off: the explicit empty placeholder state. */
export function isEmptyState(s: ViewerState): boolean {
  return s.layerOn.every((on) => !on);
}

export function setCutOffset(s: ViewerState, offset: number): ViewerState {
  return { ...s, cut: { ...s.cut, offset } };
}

export function setCutAxis(s: ViewerState, axis: 0 | 1 | 2): ViewerState {
  return { ...s, cut: { ...s.cut, axis } };
}

export function setCutEnabled(s: ViewerState, enabled: boolean): ViewerState {
  return { ...s, cut: { ...s.cut, enabled } };
}

export function toggleCutLayer(s: ViewerState, layer: number): ViewerState {
  const layerMask = s.cut.layerMask.slice();
  layerMask[layer] = !layerMask[layer];
  return { ...s, cut: { ...s.cut, layerMask } };
}

export function setSortEvery(s: ViewerState, n: number): ViewerState {
  return { ...s, sortEveryN: Math.max(1, Math.round(n)) };
}

export function frameFilter(s: ViewerState): FrameFilter {
  return { layerOn: s.layerOn, cut: s.cut.enabled ? s.cut : null };
}
