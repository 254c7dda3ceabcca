"""Numba raymarch kernel: front-to-back emission-absorption compositing."""

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _trilinear(data, origin, spacing, px, py, pz):
    gx = (px - origin[0]) / spacing[0]
    gy = (py - origin[1]) / spacing[1]
    gz = (pz - origin[2]) / spacing[2]
    fx, fy, fz = np.floor(gx), np.floor(gy), np.floor(gz)
    tx, ty, tz = gx - fx, gy - fy, gz - fz
    ix, iy, iz = int(fx), int(fy), int(fz)
    nx, ny, nz = data.shape
    acc = 0.0
    for dx in range(2):
        wx = tx if dx else 1.0 - tx
        x = ix + dx
        if x < 0 or x >= nx:
            continue
        for dy in range(2):
            wy = ty if dy else 1.0 - ty
            y = iy + dy
            if y < 0 or y >= ny:
                continue
            for dz in range(2):
                wz = tz if dz else 1.0 - tz
                z = iz + dz
                if z < 0 or z >= nz:
                    continue
                acc += wx * wy * wz * data[x, y, z]
    return acc


@njit(cache=True, inline="always")
def _tf_lookup(tf_d, tf_rgba, d, out):
    nb = tf_d.shape[0]
    if d <= tf_d[0]:
        for c in range(4):
            out[c] = tf_rgba[0, c]
        return
    if d >= tf_d[nb - 1]:
        for c in range(4):
            out[c] = tf_rgba[nb - 1, c]
        return
    for b in range(nb - 1):
        if d <= tf_d[b + 1]:
            t = (d - tf_d[b]) / (tf_d[b + 1] - tf_d[b])
            for c in range(4):
                out[c] = tf_rgba[b, c] + t * (tf_rgba[b + 1, c] - tf_rgba[b, c])
            return


@njit(cache=True, parallel=True)
def raymarch_image(data, origin, spacing, tf_d, tf_rgba, cam_pos, dirs,
                   step, ref_step, lo, hi):
    h, w = dirs.shape[0], dirs.shape[1]
    out = np.zeros((h, w, 4), dtype=np.float64)
    inv_ref = 1.0 / ref_step
    for j in prange(h):
        rgba = np.empty(4, dtype=np.float64)
        for i in range(w):
            dx, dy, dz = dirs[j, i, 0], dirs[j, i, 1], dirs[j, i, 2]
            # slab test against the padded support box
            t0, t1 = 0.0, np.inf
            hit = True
            for a in range(3):
                d = dirs[j, i, a]
                o = cam_pos[a]
                if d == 0.0:
                    if o < lo[a] or o > hi[a]:
                        hit = False
                        break
                else:
                    ta = (lo[a] - o) / d
                    tb = (hi[a] - o) / d
                    if ta > tb:
                        ta, tb = tb, ta
                    if ta > t0:
                        t0 = ta
                    if tb < t1:
                        t1 = tb
            if not hit or t1 <= t0:
                continue
            n_steps = int(np.ceil((t1 - t0) / step))
            transmit = 1.0
            cr = cg = cb = ca = 0.0
            for s in range(n_steps):
                if transmit < 1e-4:
                    break
                t = t0 + (s + 0.5) * step
                px = cam_pos[0] + t * dx
                py = cam_pos[1] + t * dy
                pz = cam_pos[2] + t * dz
                dens = _trilinear(data, origin, spacing, px, py, pz)
                _tf_lookup(tf_d, tf_rgba, dens, rgba)
                a = 1.0 - (1.0 - rgba[3]) ** (step * inv_ref)
                if a <= 0.0:
                    continue
                w_ = transmit * a
                cr += w_ * rgba[0]
                cg += w_ * rgba[1]
                cb += w_ * rgba[2]
                ca += w_
                transmit *= 1.0 - a
            if ca > 0.0:
                out[j, i, 0] = cr / ca
                out[j, i, 1] = cg / ca
                out[j, i, 2] = cb / ca
                out[j, i, 3] = ca
    return out
