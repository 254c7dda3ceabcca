/** IEEE 754 half-float decoding for the .lspl attribute arrays. */

export function halfToFloat(h: number): number {
  const sign = (h & 0x8000) ? -1 : 1;
  const exp = (h >> 10) & 0x1f;
  const frac = h & 0x3ff;
  if (exp === 0) {
    return sign * frac * Math.pow(2, -24); // subnormal (or zero)
  }
  if (exp === 31) {
    return frac ? NaN : sign * Infinity;
  }
  return sign * (1 + frac / 1024) * Math.pow(2, exp - 15);
}

export function decodeHalfArray(src: Uint16Array): Float32Array {
  const out = new Float32Array(src.length);
  for (let i = 0; i < src.length; i++) {
    out[i] = halfToFloat(src[i]);
  }
  return out;
}
