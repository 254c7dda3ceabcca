"""Procedural test scenes: one volume plus one transfer function per layer.

Materials are encoded as density bands; each layer's transfer function
reveals the union of its own bands and all lower layers' bands, mirroring
bone/muscle/soft-tissue nesting.
"""

from __future__ import annotations

import numpy as np

from .volume import TransferFunction, VoxelVolume

SCENE_IDS = ("two_layer", "three_layer", "transparency", "anatomy_analog")

_EXTENT = 1.6  # world edge length of the voxel cube


def _empty_volume(res: int) -> tuple[VoxelVolume, np.ndarray]:
    spacing = _EXTENT / res
    origin = -0.5 * _EXTENT + 0.5 * spacing
    ax = origin + spacing * np.arange(res)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    vol = VoxelVolume((res, res, res), (spacing,) * 3,
                      np.zeros((res, res, res)), (origin,) * 3)
    return vol, np.stack([x, y, z], axis=-1)


def _band(density: float, rgba, width: float = 0.02, ramp: float = 0.04):
    """Breakpoints for a flat-top alpha band centered on `density`."""
    lo, hi = density - width, density + width
    return [(lo - ramp, (rgba[0], rgba[1], rgba[2], 0.0)),
            (lo, rgba), (hi, rgba),
            (hi + ramp, (rgba[0], rgba[1], rgba[2], 0.0))]


def _assemble_tf(bands) -> TransferFunction:
    pts = [(0.0, (0.0, 0.0, 0.0, 0.0))]
    for band in sorted(bands, key=lambda b: b[0][0]):
        for d, rgba in band:
            if 0.0 < d < 1.0:
                pts.append((float(d), tuple(float(v) for v in rgba)))
    pts.append((1.0, (0.0, 0.0, 0.0, 0.0)))
    return TransferFunction(pts)


def _sample_alpha(net_opacity: float, thickness: float, ref_step: float) -> float:
    """Per-sample alpha so a straight crossing of `thickness` accumulates
    `net_opacity` (exponential absorption, exact for aligned uniform slabs)."""
    return 1.0 - (1.0 - net_opacity) ** (ref_step / thickness)


def _checker(p: np.ndarray, cell: float) -> np.ndarray:
    ix = np.floor(p[..., 0] / cell) + np.floor(p[..., 1] / cell) \
        + np.floor(p[..., 2] / cell)
    return (ix.astype(np.int64) % 2) == 0


def _box(p, half, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    q = np.abs(p - np.asarray(center))
    return np.all(q <= np.asarray(half), axis=-1)


def _capsule(p, radius, half_z, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    q = p - np.asarray(center)
    dz = np.maximum(np.abs(q[..., 2]) - half_z, 0.0)
    rr = q[..., 0] ** 2 + q[..., 1] ** 2 + dz ** 2
    return rr <= radius * radius


def _torus(p, major, minor, center, axis: int) -> np.ndarray:
    q = p - np.asarray(center)
    plane = [i for i in range(3) if i != axis]
    ring = np.sqrt(q[..., plane[0]] ** 2 + q[..., plane[1]] ** 2) - major
    return ring ** 2 + q[..., axis] ** 2 <= minor * minor


def build_scene(scene_id: str, resolution: int = 128) \
        -> tuple[VoxelVolume, list[TransferFunction]]:
    """Build a named scene; returns the volume and per-layer transfer functions."""
    if scene_id not in SCENE_IDS:
        raise ValueError(f"unknown scene {scene_id!r}; expected one of {SCENE_IDS}")
    vol, p = _empty_volume(resolution)
    d = vol.data
    ref = vol.reference_step
    white = (1.0, 1.0, 1.0)
    a95 = 0.6  # per-sample alpha of "opaque" bands; saturates within ~4 voxels

    if scene_id == "two_layer":
        # inner plain white cube, enclosed by a 5% bigger white/blue cube
        inner = _box(p, 0.5)
        outer = _box(p, 0.525) & ~inner
        checker = _checker(p, 0.21)
        d[inner] = 0.8
        d[outer & checker] = 0.3
        d[outer & ~checker] = 0.45
        tf0 = _assemble_tf([_band(0.8, (*white, a95))])
        tf1 = _assemble_tf([_band(0.3, (*white, a95)),
                            _band(0.45, (0.35, 0.55, 1.0, a95)),
                            _band(0.8, (*white, a95))])
        return vol, [tf0, tf1]

    if scene_id == "three_layer":
        core = _box(p, 0.32)
        checker = _checker(p, 0.16)
        d[core & checker] = 0.15
        d[core & ~checker] = 0.22
        # cube-outline frame: within the big box but near >= 2 faces
        half = 0.52
        beam = 0.06
        near_face = (np.abs(np.abs(p) - half) <= beam).sum(axis=-1)
        frame = _box(p, half + beam) & (near_face >= 2)
        seg = _checker(p, 0.26)
        d[frame & seg] = 0.45
        d[frame & ~seg] = 0.55
        ring1 = _torus(p, 0.42, 0.055, (0.52, 0.0, 0.0), axis=0)
        ring2 = _torus(p, 0.42, 0.055, (0.0, -0.52, 0.0), axis=1)
        d[ring1 | ring2] = 0.85
        a_ring = _sample_alpha(0.5, 0.11, ref)
        nw, nr = 0.012, 0.02  # narrow bands: materials sit 0.07 apart
        tf0_bands = [_band(0.15, (0.2, 0.8, 0.25, a95), nw, nr),
                     _band(0.22, (0.05, 0.05, 0.05, a95), nw, nr)]
        tf1_bands = tf0_bands + [_band(0.45, (0.9, 0.15, 0.1, a95), nw, nr),
                                 _band(0.55, (0.05, 0.05, 0.05, a95), nw, nr)]
        tf2_bands = tf1_bands + [_band(0.85, (0.3, 0.95, 0.4, a_ring), nw, nr)]
        return vol, [_assemble_tf(b) for b in (tf0_bands, tf1_bands, tf2_bands)]

    if scene_id == "transparency":
        # single layer: 75%-transparent green cube, 62.5%-transparent blue cube
        green = _box(p, 0.3, (-0.35, 0.0, 0.0))
        blue = _box(p, 0.28, (0.4, 0.1, 0.0))
        d[green] = 0.3
        d[blue & ~green] = 0.7
        a_green = _sample_alpha(0.25, 0.6, ref)
        a_blue = _sample_alpha(0.375, 0.56, ref)
        tf = _assemble_tf([_band(0.3, (0.6, 1.0, 0.6, a_green)),
                           _band(0.7, (0.6, 0.8, 1.0, a_blue))])
        return vol, [tf]

    # anatomy_analog: nested bone rod / muscle shell / skin shell
    bone = _capsule(p, 0.12, 0.5)
    muscle = _capsule(p, 0.3, 0.56) & ~bone
    skin = _capsule(p, 0.42, 0.6) & ~bone & ~muscle
    d[bone] = 0.9
    d[muscle] = 0.5
    d[skin] = 0.22
    a_skin = _sample_alpha(0.85, 0.12, ref)
    tf0 = _assemble_tf([_band(0.9, (0.93, 0.91, 0.85, a95))])
    tf1 = _assemble_tf([_band(0.9, (0.93, 0.91, 0.85, a95)),
                        _band(0.5, (0.75, 0.18, 0.16, a95))])
    tf2 = _assemble_tf([_band(0.9, (0.93, 0.91, 0.85, a95)),
                        _band(0.5, (0.75, 0.18, 0.16, a95)),
                        _band(0.22, (0.9, 0.72, 0.58, a_skin))])
    return vol, [tf0, tf1, tf2]
