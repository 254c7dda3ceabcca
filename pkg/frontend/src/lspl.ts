/** Parser for the layered splat viewer binary (.lspl version 1).
 *
 * Layout documented in docs/formats.md: 32-byte header, per-layer counts,
 * quantization ranges, then per-layer planar attribute sections, and for the
 * clustered profile a trailing shared SH codebook.
 */

import { decodeHalfArray } from "./half.js";

export interface LayerBuffers {
  count: number;
  positions: Float32Array;  // (n, 3)
  rotations: Float32Array;  // (n, 4) quaternions (w, x, y, z)
  logScales: Float32Array;  // (n, 3)
  opacities: Float32Array;  // (n,) logits
  shDc: Float32Array;       // (n, 3) dequantized
  shRest: Float32Array;     // (n, R) dequantized (codebook expanded)
}

export interface SplatAsset {
  profile: "low" | "clustered";
  count: number;
  layerCount: number;
  shDegree: number;
  restCoeffs: number;
  codebookSize: number;
  layers: LayerBuffers[];
}

export class LsplError extends Error {}

function dequantize(q: Uint16Array | Uint32Array, lo: Float32Array,
                    hi: Float32Array, stride: number): Float32Array {
  const out = new Float32Array(q.length);
  for (let i = 0; i < q.length; i++) {
    const a = i % stride;
    const t = q[i] / 65535;
    out[i] = lo[a] * (1 - t) + hi[a] * t; // endpoint-exact lerp
  }
  return out;
}

export function parseLspl(data: ArrayBuffer): SplatAsset {
  if (data.byteLength < 32) {
    throw new LsplError("truncated file: missing header");
  }
  const view = new DataView(data);
  const magic = String.fromCharCode(view.getUint8(0), view.getUint8(1),
                                    view.getUint8(2), view.getUint8(3));
  if (magic !== "LSPL") {
    throw new LsplError(`not an LSPL file (magic ${JSON.stringify(magic)})`);
  }
  const version = view.getUint32(4, true);
  if (version !== 1) {
    throw new LsplError(`unsupported LSPL version ${version}`);
  }
  const profile = view.getUint32(8, true) ? "clustered" : "low";
  const count = Number(view.getBigUint64(12, true));
  const layerCount = view.getUint32(20, true);
  const shDegree = view.getUint32(24, true);
  const codebookSize = view.getUint32(28, true);
  const restCoeffs = 3 * ((shDegree + 1) ** 2 - 1);

  let off = 32;
  const need = (bytes: number) => {
    if (off + bytes > data.byteLength) {
      throw new LsplError(
        `truncated file: need ${off + bytes} bytes, have ${data.byteLength}`);
    }
  };
  const u16 = (n: number) => {
    need(2 * n);
    const arr = new Uint16Array(data.slice(off, off + 2 * n));
    off += 2 * n;
    return arr;
  };
  const u32 = (n: number) => {
    need(4 * n);
    const arr = new Uint32Array(data.slice(off, off + 4 * n));
    off += 4 * n;
    return arr;
  };
  const f32 = (n: number) => {
    need(4 * n);
    const arr = new Float32Array(data.slice(off, off + 4 * n));
    off += 4 * n;
    return arr;
  };

  const counts = u32(layerCount);
  let total = 0;
  for (const c of counts) total += c;
  if (total !== count) {
    throw new LsplError("layer counts do not sum to the splat count");
  }
  const dcLo = f32(3);
  const dcHi = f32(3);
  const restLo = f32(restCoeffs);
  const restHi = f32(restCoeffs);

  const rawLayers: Array<{
    count: number; positions: Float32Array; rotations: Float32Array;
    logScales: Float32Array; opacities: Float32Array; shDc: Float32Array;
    restQ: Uint16Array | null; indices: Uint32Array | null;
  }> = [];
  for (let k = 0; k < layerCount; k++) {
    const n = counts[k];
    const positions = decodeHalfArray(u16(3 * n));
    const rotations = decodeHalfArray(u16(4 * n));
    const logScales = decodeHalfArray(u16(3 * n));
    const opacities = decodeHalfArray(u16(n));
    const shDc = dequantize(u16(3 * n), dcLo, dcHi, 3);
    if (profile === "clustered") {
      rawLayers.push({ count: n, positions, rotations, logScales, opacities,
                       shDc, restQ: null, indices: u32(n) });
    } else {
      rawLayers.push({ count: n, positions, rotations, logScales, opacities,
                       shDc, restQ: u16(restCoeffs * n), indices: null });
    }
  }

  let codebook: Float32Array | null = null;
  if (profile === "clustered") {
    codebook = dequantize(u16(restCoeffs * codebookSize), restLo, restHi,
                          restCoeffs);
  }

  const layers: LayerBuffers[] = rawLayers.map((raw) => {
    let shRest: Float32Array;
    if (raw.indices !== null) {
      shRest = new Float32Array(raw.count * restCoeffs);
      for (let i = 0; i < raw.count; i++) {
        const idx = raw.indices[i];
        if (idx >= codebookSize) {
          throw new LsplError(`codebook index ${idx} out of range`);
        }
        shRest.set(
          codebook!.subarray(idx * restCoeffs, (idx + 1) * restCoeffs),
          i * restCoeffs);
      }
    } else {
      shRest = dequantize(raw.restQ!, restLo, restHi, restCoeffs);
    }
    return { count: raw.count, positions: raw.positions,
             rotations: raw.rotations, logScales: raw.logScales,
             opacities: raw.opacities, shDc: raw.shDc, shRest };
  });

  return { profile, count, layerCount, shDegree, restCoeffs, codebookSize,
           layers };
}
