"""Procedural voxel volumes, transfer functions, and the raymarcher.

World convention: volumes are centered near the origin with z up; voxel
(i, j, k) center sits at origin + (i, j, k) * spacing. Density values live in
[0, 1] and transfer functions map density to straight-alpha RGBA.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import Camera
from .kernels import march
from .kernels.grid import trilinear_points

EARLY_STOP_T = 1e-4


@dataclass
class VoxelVolume:
    """Dense scalar density grid with per-axis spacing."""

    dims: tuple[int, int, int]
    spacing: np.ndarray
    data: np.ndarray  # (nx, ny, nz), values in [0, 1]
    origin: np.ndarray  # world position of voxel (0, 0, 0) center

    def __post_init__(self):
        self.spacing = np.asarray(self.spacing, dtype=np.float64).reshape(3)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.shape != tuple(self.dims):
            raise ValueError(f"data shape {self.data.shape} != dims {self.dims}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("volume data must be finite")
        if self.data.size and (self.data.min() < 0 or self.data.max() > 1):
            raise ValueError("volume data must lie in [0, 1]")
        if np.any(self.spacing <= 0):
            raise ValueError("spacing must be positive")

    @property
    def reference_step(self) -> float:
        """Step length at which transfer-function alphas apply unscaled."""
        return float(self.spacing.min())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Support box: density is identically zero outside (zero padding)."""
        return self.origin - self.spacing, \
            self.origin + (np.array(self.dims) - 1) * self.spacing + self.spacing

    def center(self) -> np.ndarray:
        lo, hi = self.bounds()
        return 0.5 * (lo + hi)


@dataclass
class TransferFunction:
    """Piecewise-linear density -> RGBA map (straight alpha)."""

    breakpoints: list[tuple[float, tuple[float, float, float, float]]]

    def __post_init__(self):
        d = np.array([b[0] for b in self.breakpoints], dtype=np.float64)
        if len(d) < 2 or d[0] != 0.0 or d[-1] != 1.0:
            raise ValueError("breakpoints must start at density 0 and end at 1")
        if np.any(np.diff(d) <= 0):
            raise ValueError("breakpoint densities must be strictly increasing")
        self._d = d
        self._rgba = np.array([b[1] for b in self.breakpoints], dtype=np.float64)
        if self._rgba.shape[1] != 4 or self._rgba.min() < 0 or self._rgba.max() > 1:
            raise ValueError("rgba components must lie in [0, 1]")

    @property
    def densities(self) -> np.ndarray:
        return self._d

    @property
    def rgba(self) -> np.ndarray:
        return self._rgba


def sample_trilinear(volume: VoxelVolume, p) -> float | np.ndarray:
    """Trilinearly interpolated density at world point(s); 0 outside bounds."""
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    vals = trilinear_points(volume.data, volume.origin, volume.spacing,
                            p.reshape(-1, 3))
    return float(vals[0]) if single else vals.reshape(p.shape[:-1])


def apply_transfer(tf: TransferFunction, d) -> np.ndarray:
    """Piecewise-linear RGBA at density value(s) in [0, 1]."""
    d = np.asarray(d, dtype=np.float64)
    out = np.stack([np.interp(d, tf.densities, tf.rgba[:, c]) for c in range(4)],
                   axis=-1)
    return out


def raymarch(volume: VoxelVolume, tf: TransferFunction, cam: Camera,
             step: float) -> np.ndarray:
    """Render a straight-alpha RGBA image by front-to-back raymarching.

    Per-sample opacity is corrected for step length so transfer alphas mean
    "opacity per reference step" independent of the chosen step size.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    lo, hi = volume.bounds()
    dirs = cam.ray_directions()
    return march.raymarch_image(volume.data, volume.origin, volume.spacing,
                                tf.densities, tf.rgba, cam.position, dirs,
                                float(step), volume.reference_step, lo, hi)


def init_point_cloud(volume: VoxelVolume, tf: TransferFunction,
                     ray_budget: int = 5000, alpha_threshold: float = 0.2,
                     seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Surface-approximating colored points, sampled by inward ray casting.

    Rays start on a sphere enclosing the volume and march inward; each ray
    emits one point at the first sample whose transfer alpha reaches
    `alpha_threshold`, colored by the transfer rgb there. Returns
    (positions (M, 3), colors (M, 3)) with M <= ray_budget.
    """
    if not (0.0 < alpha_threshold <= 1.0):
        raise ValueError("alpha_threshold must be in (0, 1]")
    lo, hi = volume.bounds()
    center = 0.5 * (lo + hi)
    radius = 0.5 * float(np.linalg.norm(hi - lo)) * 1.05

    k = np.arange(ray_budget, dtype=np.float64)
    z = 1.0 - 2.0 * (k + 0.5) / ray_budget
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = k * np.pi * (3.0 - np.sqrt(5.0))
    origins = center + radius * np.stack([r * np.cos(phi), r * np.sin(phi), z],
                                         axis=-1)
    rng = np.random.default_rng(seed)
    targets = center + (rng.random((ray_budget, 3)) - 0.5) * 0.5 * (hi - lo)
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)

    step = volume.reference_step * 0.5
    t0, t1 = ray_box_range_batch(origins, dirs, lo, hi)
    alive = t1 > t0
    found_pos = np.zeros((ray_budget, 3))
    found_rgb = np.zeros((ray_budget, 3))
    found = np.zeros(ray_budget, dtype=bool)
    n_steps = int(np.ceil((t1 - t0).max() / step)) if alive.any() else 0
    for s_i in range(n_steps):
        t = t0 + (s_i + 0.5) * step
        active = alive & ~found & (t < t1)
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        pts = origins[idx] + t[idx, None] * dirs[idx]
        dens = trilinear_points(volume.data, volume.origin, volume.spacing, pts)
        rgba = apply_transfer(tf, dens)
        hit = rgba[:, 3] >= alpha_threshold
        hit_idx = idx[hit]
        found[hit_idx] = True
        found_pos[hit_idx] = pts[hit]
        found_rgb[hit_idx] = rgba[hit, :3]
    return found_pos[found], found_rgb[found]


def ray_box_range_batch(origins, dirs, lo, hi):
    """ray_box_range for per-ray origins."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - origins) / dirs
        tb = (hi - origins) / dirs
    tmin = np.where(np.isnan(ta), -np.inf, np.minimum(ta, tb))
    tmax = np.where(np.isnan(tb), np.inf, np.maximum(ta, tb))
    par = dirs == 0.0
    outside = par & ((origins < lo) | (origins > hi))
    t0 = np.maximum(np.max(tmin, axis=-1), 0.0)
    t1 = np.min(tmax, axis=-1)
    t1 = np.where(np.any(outside, axis=-1), -np.inf, t1)
    return t0, t1
