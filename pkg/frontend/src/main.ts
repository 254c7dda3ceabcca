/** Browser entry: asset loading, orbit controls, layer toggles, cut slider,
 * and the render loop with an adjustable sorting cadence.
 */

import { LsplError, parseLspl, SplatAsset } from "./lspl.js";
import { orbitCamera } from "./math.js";
import { renderFrame } from "./render.js";
import {
  applyDrag, applyZoom, frameFilter, initialState, isEmptyState,
  setCutAxis, setCutEnabled, setCutOffset, setSortEvery, toggleCutLayer,
  toggleLayer, ViewerState,
} from "./state.js";

const CANVAS_SIZE = 360;

let asset: SplatAsset | null = null;
let state: ViewerState = initialState(1);
let frameCounter = 0;
let cachedProjection: ReturnType<typeof renderFrame>["projected"] | null = null;
let needsRender = true;
let lastFrameMs = 0;

function el<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

function setStatus(text: string, isError = false): void {
  const status = el<HTMLDivElement>("status");
  status.textContent = text;
  status.className = isError ? "error" : "";
}

function invalidate(resort = true): void {
  if (resort) cachedProjection = null;
  needsRender = true;
}

function loadAsset(buffer: ArrayBuffer, name: string): void {
  try {
    asset = parseLspl(buffer);
  } catch (err) {
    asset = null;
    setStatus(err instanceof LsplError ? err.message : String(err), true);
    return;
  }
  state = initialState(asset.layerCount);
  autoFrame();
  buildLayerControls();
  setStatus(`${name}: ${asset.count} splats, ${asset.layerCount} layers, `
    + `${asset.profile} profile, SH degree ${asset.shDegree}`);
  invalidate();
}

function autoFrame(): void {
  if (!asset || asset.count === 0) return;
  let cx = 0, cy = 0, cz = 0;
  for (const layer of asset.layers) {
    for (let i = 0; i < layer.count; i++) {
      cx += layer.positions[3 * i];
      cy += layer.positions[3 * i + 1];
      cz += layer.positions[3 * i + 2];
    }
  }
  state.target = [cx / asset.count, cy / asset.count, cz / asset.count];
  let spread = 0;
  for (const layer of asset.layers) {
    for (let i = 0; i < layer.count; i++) {
      spread = Math.max(spread, Math.hypot(
        layer.positions[3 * i] - state.target[0],
        layer.positions[3 * i + 1] - state.target[1],
        layer.positions[3 * i + 2] - state.target[2]));
    }
  }
  state.distance = Math.max(0.5, spread * 2.6);
  const slider = el<HTMLInputElement>("cut-offset");
  slider.min = String(-spread);
  slider.max = String(spread);
  slider.step = String(spread / 100);
  state.cut.offset = spread;
}

function buildLayerControls(): void {
  const layersDiv = el<HTMLDivElement>("layers");
  const cutDiv = el<HTMLDivElement>("cut-layers");
  layersDiv.innerHTML = "";
  cutDiv.innerHTML = "";
  if (!asset) return;
  for (let k = 0; k < asset.layerCount; k++) {
    for (const [div, handler, checked] of [
      [layersDiv, () => { state = toggleLayer(state, k); invalidate(); },
       state.layerOn[k]],
      [cutDiv, () => { state = toggleCutLayer(state, k); invalidate(); },
       state.cut.layerMask[k]],
    ] as const) {
      const label = document.createElement("label");
      const box = document.createElement("input");
      box.type = "checkbox";
      box.checked = checked;
      box.addEventListener("change", handler);
      label.appendChild(box);
      label.appendChild(document.createTextNode(` layer ${k}`));
      div.appendChild(label);
    }
  }
}

function drawLoop(): void {
  requestAnimationFrame(drawLoop);
  if (!asset || !needsRender) return;
  needsRender = false;
  const t0 = performance.now();
  const cam = orbitCamera({
    azimuthDeg: state.azimuthDeg, elevationDeg: state.elevationDeg,
    distance: state.distance, target: state.target, fovDeg: state.fovDeg,
    size: CANVAS_SIZE,
  });
  frameCounter += 1;
  const reuse = frameCounter % state.sortEveryN !== 0 ? cachedProjection : null;
  const result = renderFrame(asset, cam, frameFilter(state),
                             state.background, reuse);
  cachedProjection = result.projected;

  const canvas = el<HTMLCanvasElement>("view");
  const ctx = canvas.getContext("2d")!;
  const image = ctx.createImageData(CANVAS_SIZE, CANVAS_SIZE);
  for (let i = 0; i < CANVAS_SIZE * CANVAS_SIZE; i++) {
    image.data[4 * i] = Math.min(255, Math.round(result.rgb[3 * i] * 255));
    image.data[4 * i + 1] = Math.min(255,
                                     Math.round(result.rgb[3 * i + 1] * 255));
    image.data[4 * i + 2] = Math.min(255,
                                     Math.round(result.rgb[3 * i + 2] * 255));
    image.data[4 * i + 3] = 255;
  }
  ctx.putImageData(image, 0, 0);
  lastFrameMs = performance.now() - t0;
  const empty = isEmptyState(state) ? " (all layers off)" : "";
  el<HTMLDivElement>("stats").textContent =
    `${result.visible} visible splats, ${lastFrameMs.toFixed(0)} ms/frame `
    + `(${(1000 / Math.max(lastFrameMs, 1)).toFixed(1)} fps)${empty}`;
}

function wireUi(): void {
  const canvas = el<HTMLCanvasElement>("view");
  let dragging = false;
  let lastX = 0, lastY = 0;
  canvas.addEventListener("pointerdown", (e) => {
    dragging = true;
    lastX = e.clientX;
    lastY = e.clientY;
    canvas.setPointerCapture(e.pointerId);
  });
  canvas.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    state = applyDrag(state, e.clientX - lastX, e.clientY - lastY);
    lastX = e.clientX;
    lastY = e.clientY;
    invalidate();
  });
  canvas.addEventListener("pointerup", () => { dragging = false; });
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    state = applyZoom(state, e.deltaY > 0 ? 1.1 : 1 / 1.1);
    invalidate();
  });

  el<HTMLInputElement>("file").addEventListener("change", async (e) => {
    const input = e.target as HTMLInputElement;
    if (!input.files || input.files.length === 0) return;
    const file = input.files[0];
    loadAsset(await file.arrayBuffer(), file.name);
  });

  el<HTMLInputElement>("cut-enabled").addEventListener("change", (e) => {
    state = setCutEnabled(state, (e.target as HTMLInputElement).checked);
    invalidate();
  });
  el<HTMLSelectElement>("cut-axis").addEventListener("change", (e) => {
    state = setCutAxis(state,
      Number((e.target as HTMLSelectElement).value) as 0 | 1 | 2);
    invalidate();
  });
  el<HTMLInputElement>("cut-offset").addEventListener("input", (e) => {
    state = setCutOffset(state, Number((e.target as HTMLInputElement).value));
    invalidate();
  });
  el<HTMLInputElement>("sort-every").addEventListener("change", (e) => {
    state = setSortEvery(state, Number((e.target as HTMLInputElement).value));
    invalidate(false);
  });
}

async function boot(): Promise<void> {
  wireUi();
  const params = new URLSearchParams(window.location.search);
  const url = params.get("asset");
  if (url) {
    try {
      const resp = await fetch(url);
      if (!resp.ok) throw new Error(`fetch failed: ${resp.status}`);
      loadAsset(await resp.arrayBuffer(), url);
    } catch (err) {
      setStatus(String(err), true);
    }
  } else {
    setStatus("pick an .lspl file exported by `layersplat export-viewer`");
  }
  drawLoop();
}

boot();
