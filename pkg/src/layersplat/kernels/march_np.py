"""Pure-numpy raymarch fallback: lockstep marching over all rays at once."""

import numpy as np

from .grid import ray_box_range, trilinear_points


def raymarch_image(data, origin, spacing, tf_d, tf_rgba, cam_pos, dirs,
                   step, ref_step, lo, hi):
    h, w = dirs.shape[0], dirs.shape[1]
    d_flat = dirs.reshape(-1, 3)
    n = d_flat.shape[0]
    t0, t1 = ray_box_range(cam_pos, d_flat, lo, hi)
    hit = t1 > t0

    color = np.zeros((n, 3), dtype=np.float64)
    alpha = np.zeros(n, dtype=np.float64)
    transmit = np.ones(n, dtype=np.float64)
    span = np.where(hit, t1 - t0, 0.0)
    n_steps = int(np.ceil(span.max() / step)) if span.max() > 0 else 0
    steps_per_ray = np.ceil(span / step).astype(np.int64)

    inv_ref = 1.0 / ref_step
    for s in range(n_steps):
        active = hit & (s < steps_per_ray) & (transmit >= 1e-4)
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        t = t0[idx] + (s + 0.5) * step
        pts = cam_pos + t[:, None] * d_flat[idx]
        dens = trilinear_points(data, origin, spacing, pts)
        a_tf = np.interp(dens, tf_d, tf_rgba[:, 3])
        a = 1.0 - (1.0 - a_tf) ** (step * inv_ref)
        rgb = np.stack([np.interp(dens, tf_d, tf_rgba[:, c]) for c in range(3)],
                       axis=-1)
        w_ = transmit[idx] * a
        color[idx] += w_[:, None] * rgb
        alpha[idx] += w_
        transmit[idx] *= 1.0 - a

    out = np.zeros((n, 4), dtype=np.float64)
    pos = alpha > 0.0
    out[pos, :3] = color[pos] / alpha[pos, None]
    out[pos, 3] = alpha[pos]
    return out.reshape(h, w, 4)
