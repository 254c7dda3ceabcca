"""Runtime rendering of trained layered clouds.

Non-differentiable path: layer activation masks, per-layer cut planes, mono
and stereo output, and sort/raster phase timing. Stereo can share one depth
sort computed from the eye center, halving sort work per frame.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .cameras import Camera
from .formats import CompressedCloud, dequantize
from .splats import CutPlane, GaussianCloud, _filter_mask, rasterize


@dataclass
class ViewRequest:
    camera: Camera
    active_layers: np.ndarray | None = None
    cut_plane: CutPlane | None = None
    background: tuple = (0.0, 0.0, 0.0)


@dataclass
class StereoRequest:
    camera: Camera                 # center-eye camera
    eye_offset: float = 0.06       # interpupillary distance, world units
    shared_sort: bool = True
    active_layers: np.ndarray | None = None
    cut_plane: CutPlane | None = None
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.eye_offset < 0:
            raise ValueError("eye offset must be non-negative")


@dataclass
class TimingRecord:
    view_id: str
    splat_count: int
    sort_ms: float
    raster_ms: float
    total_ms: float = 0.0


def sort_indices(cloud: GaussianCloud, eye_position,
                 active_layers=None, cut: CutPlane | None = None) -> np.ndarray:
    """Surviving splat indices ordered by ascending distance to the eye.

    Stable: equal depths keep original index order. Deterministic.
    """
    if active_layers is None:
        active_layers = np.ones(cloud.layer_count, dtype=bool)
    keep = _filter_mask(cloud, active_layers, cut)
    idx = np.nonzero(keep)[0]
    eye = np.asarray(eye_position, dtype=np.float64)
    depth = np.linalg.norm(cloud.positions[idx] - eye, axis=1)
    return idx[np.argsort(depth, kind="stable")]


def _as_cloud(cloud) -> GaussianCloud:
    if isinstance(cloud, CompressedCloud):
        return dequantize(cloud)
    return cloud


def render_view(cloud, req: ViewRequest):
    """Render one view; returns (RenderOutput, TimingRecord).

    Accepts a GaussianCloud or a CompressedCloud (dequantized on the fly).
    Compositing is exactly splat-core's forward pass.
    """
    t_all = time.perf_counter()
    gc = _as_cloud(cloud)
    t0 = time.perf_counter()
    order = sort_indices(gc, req.camera.position, req.active_layers,
                         req.cut_plane)
    t_sort = time.perf_counter() - t0
    t0 = time.perf_counter()
    out = rasterize(gc, req.camera, req.background, req.active_layers,
                    req.cut_plane, order_hint=order)
    t_raster = time.perf_counter() - t0
    timing = TimingRecord("view", len(order), t_sort * 1e3, t_raster * 1e3,
                          (time.perf_counter() - t_all) * 1e3)
    return out, timing


def render_stereo(cloud, req: StereoRequest):
    """Render a stereo pair; returns (left, right, [left timing, right timing]).

    shared_sort reuses one eye-center sort for both eyes; otherwise each eye
    sorts independently. Everything else is identical.
    """
    gc = _as_cloud(cloud)
    right_axis = req.camera.right_axis()
    half = 0.5 * req.eye_offset * right_axis
    eyes = {"left": req.camera.shifted(-half), "right": req.camera.shifted(half)}

    timings = []
    images = {}
    shared_order = None
    shared_ms = 0.0
    if req.shared_sort:
        t0 = time.perf_counter()
        shared_order = sort_indices(gc, req.camera.position,
                                    req.active_layers, req.cut_plane)
        shared_ms = (time.perf_counter() - t0) * 1e3
    for name, cam in eyes.items():
        t_all = time.perf_counter()
        if shared_order is None:
            t0 = time.perf_counter()
            order = sort_indices(gc, cam.position, req.active_layers,
                                 req.cut_plane)
            sort_ms = (time.perf_counter() - t0) * 1e3
        else:
            order = shared_order
            sort_ms = shared_ms / 2.0  # one sort amortized over both eyes
        t0 = time.perf_counter()
        out = rasterize(gc, cam, req.background, req.active_layers,
                        req.cut_plane, order_hint=order)
        raster_ms = (time.perf_counter() - t0) * 1e3
        images[name] = out
        timings.append(TimingRecord(f"stereo_{name}", len(order), sort_ms,
                                    raster_ms,
                                    (time.perf_counter() - t_all) * 1e3
                                    + (shared_ms / 2.0 if shared_order is not None
                                       else 0.0)))
    return images["left"], images["right"], timings


def write_timing_csv(path, records: list[TimingRecord]) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["view", "splats", "sort_ms", "raster_ms", "total_ms"])
        for r in records:
            wr.writerow([r.view_id, r.splat_count, f"{r.sort_ms:.4f}",
                         f"{r.raster_ms:.4f}", f"{r.total_ms:.4f}"])
