/** CPU splat renderer with the primary pipeline's exact compositing math:
 * EWA projection with the 0.3 screen-space dilation, global front-to-back
 * ordering, per-pixel alpha test at 1/255 and termination at T < 1e-4.
 */

import { SplatAsset } from "./lspl.js";
import { CameraPose, quatToMat } from "./math.js";

const SH_C0 = 0.28209479177387814;
const SH_C1 = 0.4886025119029199;
const SH_C2 = [1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
               -1.0925484305920792, 0.5462742152960396];
const SH_C3 = [-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
               0.3731763325901154, -0.4570457994644658, 1.445305721320277,
               -0.5900435899266435];

export interface CutState {
  axis: 0 | 1 | 2;
  offset: number;
  enabled: boolean;
  layerMask: boolean[]; // which layers the cut applies to
}

export interface FrameFilter {
  layerOn: boolean[];
  cut: CutState | null;
}

export interface FrameResult {
  rgb: Float32Array;    // (h*w*3), composited over background
  alpha: Float32Array;  // (h*w)
  visible: number;      // splat count after layer/cut/frustum filtering
}

interface Projected {
  depth: Float64Array;
  meanX: Float64Array;
  meanY: Float64Array;
  conicA: Float64Array;
  conicB: Float64Array;
  conicC: Float64Array;
  radius: Float64Array;
  opac: Float64Array;
  rgb: Float64Array; // (n, 3)
  order: Int32Array;
  count: number;
}

function shColor(dc: Float32Array, rest: Float32Array, o3: number, oR: number,
                 degree: number, dx: number, dy: number, dz: number,
                 out: Float64Array): void {
  for (let c = 0; c < 3; c++) {
    let v = SH_C0 * dc[o3 + c];
    if (degree > 0) {
      const r = (k: number) => rest[oR + 3 * k + c];
      v += -SH_C1 * dy * r(0) + SH_C1 * dz * r(1) - SH_C1 * dx * r(2);
      if (degree > 1) {
        const xx = dx * dx, yy = dy * dy, zz = dz * dz;
        v += SH_C2[0] * dx * dy * r(3)
          + SH_C2[1] * dy * dz * r(4)
          + SH_C2[2] * (2 * zz - xx - yy) * r(5)
          + SH_C2[3] * dx * dz * r(6)
          + SH_C2[4] * (xx - yy) * r(7);
        if (degree > 2) {
          v += SH_C3[0] * dy * (3 * xx - yy) * r(8)
            + SH_C3[1] * dx * dy * dz * r(9)
            + SH_C3[2] * dy * (4 * zz - xx - yy) * r(10)
            + SH_C3[3] * dz * (2 * zz - 3 * xx - 3 * yy) * r(11)
            + SH_C3[4] * dx * (4 * zz - xx - yy) * r(12)
            + SH_C3[5] * dz * (xx - yy) * r(13)
            + SH_C3[6] * dx * (xx - 3 * yy) * r(14);
        }
      }
    }
    out[c] = Math.max(v + 0.5, 0);
  }
}

/** Project and filter every splat; returns flat per-survivor arrays. */
function projectAll(asset: SplatAsset, cam: CameraPose,
                    filter: FrameFilter): Projected {
  const total = asset.count;
  const depth = new Float64Array(total);
  const meanX = new Float64Array(total);
  const meanY = new Float64Array(total);
  const conicA = new Float64Array(total);
  const conicB = new Float64Array(total);
  const conicC = new Float64Array(total);
  const radius = new Float64Array(total);
  const opac = new Float64Array(total);
  const rgb = new Float64Array(total * 3);
  const keep = new Int32Array(total);
  const w = cam.worldToCam;
  const f = cam.focal;
  const color = new Float64Array(3);
  const restStride = asset.restCoeffs;
  let m = 0;
  for (let layer = 0; layer < asset.layerCount; layer++) {
    if (!filter.layerOn[layer]) continue;
    const buf = asset.layers[layer];
    const cutHere = filter.cut !== null && filter.cut.enabled
      && filter.cut.layerMask[layer];
    for (let i = 0; i < buf.count; i++) {
      const px = buf.positions[3 * i];
      const py = buf.positions[3 * i + 1];
      const pz = buf.positions[3 * i + 2];
      if (cutHere) {
        const coord = filter.cut!.axis === 0 ? px
          : filter.cut!.axis === 1 ? py : pz;
        if (coord > filter.cut!.offset) continue;
      }
      const rx = px - cam.position[0];
      const ry = py - cam.position[1];
      const rz = pz - cam.position[2];
      const tx = w[0] * rx + w[1] * ry + w[2] * rz;
      const ty = w[3] * rx + w[4] * ry + w[5] * rz;
      const tz = w[6] * rx + w[7] * ry + w[8] * rz;
      if (tz <= cam.near) continue;
      const logit = buf.opacities[i];
      const op = 1 / (1 + Math.exp(-logit));
      if (op * 255 <= 1) continue;

      // cov3d = (R S)(R S)^T from quaternion + log scales
      const qw = buf.rotations[4 * i], qx = buf.rotations[4 * i + 1];
      const qy = buf.rotations[4 * i + 2], qz = buf.rotations[4 * i + 3];
      const qn = Math.hypot(qw, qx, qy, qz);
      const rot = quatToMat(qw / qn, qx / qn, qy / qn, qz / qn);
      const s0 = Math.exp(buf.logScales[3 * i]);
      const s1 = Math.exp(buf.logScales[3 * i + 1]);
      const s2 = Math.exp(buf.logScales[3 * i + 2]);
      // L = R * diag(s); cov3d = L L^T
      const l = [rot[0] * s0, rot[1] * s1, rot[2] * s2,
                 rot[3] * s0, rot[4] * s1, rot[5] * s2,
                 rot[6] * s0, rot[7] * s1, rot[8] * s2];
      const v00 = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
      const v01 = l[0] * l[3] + l[1] * l[4] + l[2] * l[5];
      const v02 = l[0] * l[6] + l[1] * l[7] + l[2] * l[8];
      const v11 = l[3] * l[3] + l[4] * l[4] + l[5] * l[5];
      const v12 = l[3] * l[6] + l[4] * l[7] + l[5] * l[8];
      const v22 = l[6] * l[6] + l[7] * l[7] + l[8] * l[8];

      // J W rows (2x3)
      const j00 = f / tz, j02 = -f * tx / (tz * tz);
      const j11 = f / tz, j12 = -f * ty / (tz * tz);
      const a0 = j00 * w[0] + j02 * w[6];
      const a1 = j00 * w[1] + j02 * w[7];
      const a2 = j00 * w[2] + j02 * w[8];
      const b0 = j11 * w[3] + j12 * w[6];
      const b1 = j11 * w[4] + j12 * w[7];
      const b2 = j11 * w[5] + j12 * w[8];
      // cov2d = (JW) V (JW)^T + 0.3 I
      const t0 = a0 * v00 + a1 * v01 + a2 * v02;
      const t1 = a0 * v01 + a1 * v11 + a2 * v12;
      const t2 = a0 * v02 + a1 * v12 + a2 * v22;
      const u0 = b0 * v00 + b1 * v01 + b2 * v02;
      const u1 = b0 * v01 + b1 * v11 + b2 * v12;
      const u2 = b0 * v02 + b1 * v12 + b2 * v22;
      const cA = t0 * a0 + t1 * a1 + t2 * a2 + 0.3;
      const cB = t0 * b0 + t1 * b1 + t2 * b2;
      const cC = u0 * b0 + u1 * b1 + u2 * b2 + 0.3;
      const det = cA * cC - cB * cB;
      if (det <= 1e-12) continue;

      const dist = Math.hypot(rx, ry, rz);
      shColor(buf.shDc, buf.shRest, 3 * i, restStride * i, asset.shDegree,
              rx / dist, ry / dist, rz / dist, color);

      depth[m] = dist;
      meanX[m] = f * tx / tz + cam.width / 2;
      meanY[m] = f * ty / tz + cam.height / 2;
      conicA[m] = cC / det;
      conicB[m] = -cB / det;
      conicC[m] = cA / det;
      const lamMax = 0.5 * (cA + cC + Math.hypot(cA - cC, 2 * cB));
      radius[m] = Math.sqrt(2 * Math.log(255 * op) * lamMax);
      opac[m] = op;
      rgb[3 * m] = color[0];
      rgb[3 * m + 1] = color[1];
      rgb[3 * m + 2] = color[2];
      keep[m] = m;
      m++;
    }
  }
  const order = new Int32Array(keep.subarray(0, m));
  // ascending distance to the eye, stable on ties
  order.sort((a, b) => depth[a] - depth[b] || a - b);
  return { depth, meanX, meanY, conicA, conicB, conicC, radius, opac, rgb,
           order, count: m };
}

export function renderFrame(asset: SplatAsset, cam: CameraPose,
                            filter: FrameFilter,
                            background: [number, number, number],
                            cachedOrder: Projected | null = null,
                            ): FrameResult & { projected: Projected } {
  const proj = cachedOrder ?? projectAll(asset, cam, filter);
  const w = cam.width, h = cam.height;
  const rgb = new Float32Array(w * h * 3);
  const alpha = new Float32Array(w * h);
  const transmit = new Float32Array(w * h).fill(1);

  for (let oi = 0; oi < proj.count; oi++) {
    const s = proj.order[oi];
    const r = proj.radius[s];
    const mx = proj.meanX[s], my = proj.meanY[s];
    const x0 = Math.max(0, Math.floor(mx - r - 0.5));
    const x1 = Math.min(w - 1, Math.ceil(mx + r - 0.5));
    const y0 = Math.max(0, Math.floor(my - r - 0.5));
    const y1 = Math.min(h - 1, Math.ceil(my + r - 0.5));
    if (x1 < x0 || y1 < y0) continue;
    const cA = proj.conicA[s], cB = proj.conicB[s], cC = proj.conicC[s];
    const op = proj.opac[s];
    const cr = proj.rgb[3 * s], cg = proj.rgb[3 * s + 1],
      cb = proj.rgb[3 * s + 2];
    for (let py = y0; py <= y1; py++) {
      const dy = py + 0.5 - my;
      for (let px = x0; px <= x1; px++) {
        const pix = py * w + px;
        const t = transmit[pix];
        if (t < 1e-4) continue;
        const dx = px + 0.5 - mx;
        const power = -0.5 * (cA * dx * dx + cC * dy * dy) - cB * dx * dy;
        if (power < -7) continue;
        const a = op * Math.exp(power);
        if (a < 1 / 255) continue;
        const wgt = t * a;
        rgb[3 * pix] += wgt * cr;
        rgb[3 * pix + 1] += wgt * cg;
        rgb[3 * pix + 2] += wgt * cb;
        alpha[pix] += wgt;
        transmit[pix] = t * (1 - a);
      }
    }
  }
  for (let pix = 0; pix < w * h; pix++) {
    const t = transmit[pix];
    rgb[3 * pix] += t * background[0];
    rgb[3 * pix + 1] += t * background[1];
    rgb[3 * pix + 2] += t * background[2];
  }
  return { rgb, alpha, visible: proj.count, projected: proj };
}

/** Splat count surviving the layer/cut/frustum filter for a pose. */
export function visibleCount(asset: SplatAsset, cam: CameraPose,
                             filter: FrameFilter): number {
  return projectAll(asset, cam, filter).count;
}

/** Splat count after layer toggles and cut plane only (no frustum test);
 * comparable with the primary renderer's sort_indices filter counts. */
export function filterCount(asset: SplatAsset, filter: FrameFilter): number {
  let m = 0;
  for (let layer = 0; layer < asset.layerCount; layer++) {
    if (!filter.layerOn[layer]) continue;
    const buf = asset.layers[layer];
    const cutHere = filter.cut !== null && filter.cut.enabled
      && filter.cut.layerMask[layer];
    if (!cutHere) {
      m += buf.count;
      continue;
    }
    const axis = filter.cut!.axis;
    for (let i = 0; i < buf.count; i++) {
      if (buf.positions[3 * i + axis] <= filter.cut!.offset) m++;
    }
  }
  return m;
}
