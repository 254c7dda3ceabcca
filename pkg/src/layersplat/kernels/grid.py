"""Vectorized voxel-grid sampling shared by the numpy kernel paths."""

import numpy as np


def trilinear_points(data: np.ndarray, origin: np.ndarray, spacing: np.ndarray,
                     pts: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of `data` (nx, ny, nz) at world points (M, 3).

    Voxel (i, j, k) center sits at origin + (i, j, k) * spacing. Neighbors
    outside the grid contribute zero, so values fade to exactly 0 one voxel
    beyond the outermost centers.
    """
    g = (np.asarray(pts, dtype=np.float64) - origin) / spacing
    f = np.floor(g)
    frac = g - f
    base = f.astype(np.int64)
    nx, ny, nz = data.shape
    out = np.zeros(g.shape[0], dtype=np.float64)
    for corner in range(8):
        dx, dy, dz = (corner >> 2) & 1, (corner >> 1) & 1, corner & 1
        ix, iy, iz = base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz
        w = ((frac[:, 0] if dx else 1.0 - frac[:, 0])
             * (frac[:, 1] if dy else 1.0 - frac[:, 1])
             * (frac[:, 2] if dz else 1.0 - frac[:, 2]))
        valid = ((ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
                 & (iz >= 0) & (iz < nz))
        vals = np.zeros_like(out)
        vals[valid] = data[ix[valid], iy[valid], iz[valid]]
        out += w * vals
    return out


def ray_box_range(cam_pos, dirs, lo, hi):
    """Entry/exit distances of rays against an axis-aligned box.

    Returns (t0, t1) arrays; a ray misses the box when t1 <= max(t0, 0).
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        ta = (lo - cam_pos) * inv
        tb = (hi - cam_pos) * inv
    tmin = np.where(np.isnan(ta), -np.inf, np.minimum(ta, tb))
    tmax = np.where(np.isnan(tb), np.inf, np.maximum(ta, tb))
    # Rays parallel to an axis inside the slab: +-inf handled by min/max;
    # parallel outside the slab yields an empty range below.
    par = dirs == 0.0
    outside = par & ((cam_pos < lo) | (cam_pos > hi))
    t0 = np.max(tmin, axis=-1)
    t1 = np.min(tmax, axis=-1)
    t1 = np.where(np.any(outside, axis=-1), -np.inf, t1)
    return np.maximum(t0, 0.0), t1
