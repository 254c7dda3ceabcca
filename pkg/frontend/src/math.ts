/** Camera math matching the primary renderer's conventions:
 * camera space x right, y down, z forward; pixel centers at i + 0.5;
 * u = focal * x/z + width/2. World up is +z.
 */

export type Mat3 = Float64Array; // row-major 3x3

export function quatToMat(w: number, x: number, y: number,
                          z: number): Mat3 {
  const m = new Float64Array(9);
  m[0] = 1 - 2 * (y * y + z * z);
  m[1] = 2 * (x * y - w * z);
  m[2] = 2 * (x * z + w * y);
  m[3] = 2 * (x * y + w * z);
  m[4] = 1 - 2 * (x * x + z * z);
  m[5] = 2 * (y * z - w * x);
  m[6] = 2 * (x * z - w * y);
  m[7] = 2 * (y * z + w * x);
  m[8] = 1 - 2 * (x * x + y * y);
  return m;
}

export interface CameraPose {
  position: [number, number, number];
  worldToCam: Mat3;
  focal: number;
  width: number;
  height: number;
  near: number;
}

function normalize(v: number[]): number[] {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

function cross(a: number[], b: number[]): number[] {
  return [a[1] * b[2] - a[2] * b[1],
          a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]];
}

export function lookAtMatrix(position: number[], target: number[]): Mat3 {
  const forward = normalize([target[0] - position[0],
                             target[1] - position[1],
                             target[2] - position[2]]);
  let up = [0, 0, 1];
  let right = cross(forward, up);
  if (Math.hypot(right[0], right[1], right[2]) < 1e-9) {
    up = [0, 1, 0];
    right = cross(forward, up);
  }
  right = normalize(right);
  const down = cross(forward, right);
  const m = new Float64Array(9);
  m.set(right, 0);
  m.set(down, 3);
  m.set(forward, 6);
  return m;
}

export interface OrbitParams {
  azimuthDeg: number;
  elevationDeg: number;
  distance: number;
  target: [number, number, number];
  fovDeg: number;
  size: number;
}

export function orbitCamera(p: OrbitParams): CameraPose {
  const az = (p.azimuthDeg * Math.PI) / 180;
  const el = (p.elevationDeg * Math.PI) / 180;
  const position: [number, number, number] = [
    p.target[0] + p.distance * Math.cos(el) * Math.cos(az),
    p.target[1] + p.distance * Math.cos(el) * Math.sin(az),
    p.target[2] + p.distance * Math.sin(el),
  ];
  const focal = (0.5 * p.size) / Math.tan(((p.fovDeg * Math.PI) / 180) / 2);
  return { position, worldToCam: lookAtMatrix(position, p.target), focal,
           width: p.size, height: p.size, near: 0.05 };
}
