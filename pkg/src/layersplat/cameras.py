"""Pinhole cameras, quaternion helpers, and deterministic pose generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def quat_to_mat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix for unit quaternion(s) (w, x, y, z). Accepts (..., 4)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def mat_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a 3x3 rotation matrix (w >= 0)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass
class Camera:
    """Pinhole camera.

    Camera space is OpenCV-style: x right, y down, z forward. `rotation` is a
    unit quaternion (w, x, y, z) mapping world to camera:
    x_cam = R(rotation) @ (x_world - position). A world point projects to
    pixel coordinates u = focal * x/z + width/2, v = focal * y/z + height/2,
    with pixel (i, j) covering [i, i+1) x [j, j+1) and center (i+0.5, j+0.5).
    """

    position: np.ndarray
    rotation: np.ndarray
    focal: float
    width: int
    height: int
    near: float = 0.05

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(self.rotation)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"camera quaternion norm {norm} is not 1")
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if self.near <= 0:
            raise ValueError("near must be positive")

    @property
    def world_to_cam(self) -> np.ndarray:
        return quat_to_mat(self.rotation)

    def right_axis(self) -> np.ndarray:
        """Camera +x axis expressed in world coordinates (for stereo offsets)."""
        return self.world_to_cam[0]

    def shifted(self, world_offset: np.ndarray) -> "Camera":
        return Camera(self.position + np.asarray(world_offset, dtype=np.float64),
                      self.rotation.copy(), self.focal, self.width, self.height,
                      self.near)

    def ray_directions(self) -> np.ndarray:
        """Unit world-space ray directions for every pixel center, (H, W, 3)."""
        u = (np.arange(self.width) + 0.5) - self.width / 2.0
        v = (np.arange(self.height) + 0.5) - self.height / 2.0
        uu, vv = np.meshgrid(u, v)
        d_cam = np.stack([uu / self.focal, vv / self.focal,
                          np.ones_like(uu)], axis=-1)
        d_world = d_cam @ self.world_to_cam  # R^T applied row-wise
        return d_world / np.linalg.norm(d_world, axis=-1, keepdims=True)


def look_at_quat(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera quaternion for a camera at `position` looking at `target`."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    n = np.linalg.norm(right)
    if n < 1e-9:  # looking along the up axis; pick any perpendicular
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, up)
        n = np.linalg.norm(right)
    right /= n
    down = np.cross(forward, right)
    return mat_to_quat(np.stack([right, down, forward]))


def generate_cameras(n: int, center, radius: float, height_band=(0.1, 0.9),
                     seed: int = 0, width: int = 64, height: int = 64,
                     focal: float | None = None, fov_deg: float = 50.0,
                     near: float = 0.05) -> list[Camera]:
    """Seed-reproducible cameras on a spherical band, all looking at `center`.

    Azimuths follow a golden-angle spiral starting at 0; elevations are
    stratified over the band with seeded jitter (exact band midpoint when
    n == 1). `height_band` is (min, max) elevation in radians.
    """
    if n < 1:
        raise ValueError("need at least one camera")
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=np.float64)
    if focal is None:
        focal = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2.0)

    lo, hi = float(height_band[0]), float(height_band[1])
    if n == 1:
        ts = np.array([0.5])
    else:
        rng = np.random.default_rng(seed)
        ts = (np.arange(n) + rng.random(n)) / n
    elev = lo + ts * (hi - lo)
    azim = np.arange(n) * GOLDEN_ANGLE

    cams = []
    for k in range(n):
        pos = center + radius * np.array([np.cos(elev[k]) * np.cos(azim[k]),
                                          np.cos(elev[k]) * np.sin(azim[k]),
                                          np.sin(elev[k])])
        cams.append(Camera(pos, look_at_quat(pos, center), focal,
                           width, height, near))
    return cams
