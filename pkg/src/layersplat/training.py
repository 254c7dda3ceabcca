"""Layered optimization: loss, Adam, densification, and inactive pruning.

Layers train consecutively; previously optimized layers stay frozen and act
as a rendered background for the next layer. Per-Gaussian optimizer activity
is accumulated in sync with the densification interval; Gaussians whose
average weighted activity falls below an exponentially decaying threshold are
removed (they are either obscured by lower layers or already settled).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .metrics import psnr, ssim_with_grad
from .splats import (CloudGradients, GaussianCloud, inverse_sigmoid, rasterize,
                     rasterize_backward, rgb_to_sh_dc, sigmoid)

@dataclass
class TrainConfig:
    iterations: int = 3000
    lr_position: float = 1.6e-4       # scaled by scene extent, decays to final
    lr_position_final: float = 1.6e-6
    lr_sh: float = 2.5e-3             # dc band; rest bands divided by 20
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lambda_dssim: float = 0.2
    lambda_alpha: float = 0.2
    densify_interval: int = 100       # densify/prune/activity cadence
    densify_from: int = 300
    densify_until: int | None = None  # defaults to iterations // 2
    densify_grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    opacity_prune_threshold: float = 0.005
    opacity_reset_interval: int = 3000
    opacity_reset_enabled: bool = True
    activity_t0: float = 0.015
    activity_decay: float = 0.975
    activity_weights: tuple = (2.0, 0.1, 0.1)
    activity_visibility_gate: float = 0.5  # blend weight for full activity credit
    inactive_prune_enabled: bool = True
    background_mode: str = "random"   # "random" or "fixed"
    background_rgb: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    sh_degree: int = 3
    init_opacity: float = 0.1
    log_interval: int = 50

    def __post_init__(self):
        if not (0.0 <= self.lambda_dssim <= 1.0):
            raise ValueError("lambda_dssim must be in [0, 1]")
        if not (0.0 <= self.lambda_alpha <= 1.0):
            raise ValueError("lambda_alpha must be in [0, 1]")
        if not (0.0 < self.activity_decay < 1.0):
            raise ValueError("activity_decay must be in (0, 1)")
        if self.background_mode not in ("random", "fixed"):
            raise ValueError("background_mode must be 'random' or 'fixed'")

    @property
    def densify_end(self) -> int:
        return self.iterations // 2 if self.densify_until is None \
            else self.densify_until

    @staticmethod
    def hq(**overrides) -> "TrainConfig":
        """High-quality preset: denser adaptive control."""
        base = dict(densify_grad_threshold=1e-4, percent_dense=0.005)
        base.update(overrides)
        return TrainConfig(**base)


def composite_over(image: np.ndarray, background) -> np.ndarray:
    """Straight-alpha RGBA over an rgb background: rgb*a + bg*(1-a)."""
    background = np.asarray(background, dtype=np.float64)
    a = image[..., 3:4]
    return image[..., :3] * a + background * (1.0 - a)


def loss(render, gt_rgba: np.ndarray, background, cfg: TrainConfig):
    """Training loss and analytic gradients w.r.t. render.rgb / render.alpha.

    L = (1-ld)*L1(rgb, gt over bg) + ld*(1 - SSIM(same)) + la*L1(alpha, gt.a)
    """
    gt_rgba = np.asarray(gt_rgba, dtype=np.float64)
    if gt_rgba.shape[:2] != render.rgb.shape[:2]:
        raise ValueError("render and ground truth dimensions differ")
    gt_c = composite_over(gt_rgba, background)
    ld, la = cfg.lambda_dssim, cfg.lambda_alpha

    diff = render.rgb - gt_c
    n_rgb = diff.size
    l1 = float(np.abs(diff).mean())
    grad_rgb = (1.0 - ld) * np.sign(diff) / n_rgb

    ssim_val = 1.0
    if ld > 0.0:
        ssim_val, ssim_grad = ssim_with_grad(render.rgb, gt_c)
        grad_rgb = grad_rgb - ld * ssim_grad

    adiff = render.alpha - gt_rgba[..., 3]
    alpha_l1 = float(np.abs(adiff).mean())
    grad_alpha = la * np.sign(adiff) / adiff.size

    total = (1.0 - ld) * l1 + ld * (1.0 - ssim_val) + la * alpha_l1
    return total, grad_rgb, grad_alpha


@dataclass
class OptimizerState:
    """Adam moments per parameter group; rows track the cloud through
    densification (new Gaussians start at zero) and pruning."""

    m: dict
    v: dict
    step: int = 0

    @staticmethod
    def for_cloud(cloud: GaussianCloud) -> "OptimizerState":
        shapes = _group_shapes(cloud)
        return OptimizerState({g: np.zeros(s) for g, s in shapes.items()},
                              {g: np.zeros(s) for g, s in shapes.items()})

    def keep(self, mask: np.ndarray) -> None:
        for g in self.m:
            self.m[g] = self.m[g][mask]
            self.v[g] = self.v[g][mask]

    def grow(self, n_new: int) -> None:
        for g in self.m:
            pad = np.zeros((n_new,) + self.m[g].shape[1:])
            self.m[g] = np.concatenate([self.m[g], pad])
            self.v[g] = np.concatenate([self.v[g], pad])


def _group_shapes(cloud: GaussianCloud) -> dict:
    n = len(cloud)
    k = (cloud.sh_degree + 1) ** 2
    return {"position": (n, 3), "sh_dc": (n, 1, 3), "sh_rest": (n, k - 1, 3),
            "opacity": (n,), "scale": (n, 3), "rotation": (n, 4)}


def expon_lr(step: int, lr_init: float, lr_final: float, max_steps: int) -> float:
    """Log-linear interpolation from lr_init to lr_final over max_steps."""
    t = np.clip(step / max_steps, 0.0, 1.0)
    return float(np.exp(np.log(lr_init) * (1 - t) + np.log(lr_final) * t))


def learning_rates(cfg: TrainConfig, step: int, scene_extent: float) -> dict:
    return {
        "position": expon_lr(step, cfg.lr_position * scene_extent,
                             cfg.lr_position_final * scene_extent,
                             cfg.iterations),
        "sh_dc": cfg.lr_sh,
        "sh_rest": cfg.lr_sh / 20.0,
        "opacity": cfg.lr_opacity,
        "scale": cfg.lr_scale,
        "rotation": cfg.lr_rotation,
    }


_ADAM_B1, _ADAM_B2 = 0.9, 0.999
_ADAM_EPS = {"position": 1e-15}  # 3DGS convention; 1e-8 elsewhere


def adam_step(cloud: GaussianCloud, grads: CloudGradients,
              state: OptimizerState, lrs: dict):
    """In-place Adam update of all unfrozen Gaussians.

    Returns per-Gaussian activity norms (position, color-dc, scale): L2 norms
    of the applied update divided by the group learning rate. Dividing by the
    rate makes the norms dimensionless so one activity threshold fits every
    scene scale (learning rates already carry the scene extent).
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - _ADAM_B1 ** t
    bc2 = 1.0 - _ADAM_B2 ** t
    unfrozen = ~cloud.frozen

    params = {"position": cloud.positions, "sh_dc": cloud.sh[:, :1, :],
              "sh_rest": cloud.sh[:, 1:, :], "opacity": cloud.opacity_logits,
              "scale": cloud.log_scales, "rotation": cloud.rotations}
    gvals = {"position": grads.position, "sh_dc": grads.sh[:, :1, :],
             "sh_rest": grads.sh[:, 1:, :], "opacity": grads.opacity_logit,
             "scale": grads.log_scale, "rotation": grads.rotation}
    if any(params[g].shape != gvals[g].shape for g in params):
        raise ValueError("gradient shapes do not match parameter shapes")

    any_frozen = bool(cloud.frozen.any())
    norms = {}
    for g, p in params.items():
        grad = gvals[g]
        if any_frozen:
            grad = grad * (unfrozen.reshape((-1,) + (1,) * (grad.ndim - 1)))
        m, v = state.m[g], state.v[g]
        m *= _ADAM_B1
        m += (1 - _ADAM_B1) * grad
        v *= _ADAM_B2
        v += (1 - _ADAM_B2) * grad ** 2
        eps = _ADAM_EPS.get(g, 1e-8)
        upd = lrs[g] * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if any_frozen:
            upd[cloud.frozen] = 0.0
        p -= upd
        if g in ("position", "sh_dc", "scale"):
            flat = upd.reshape(len(cloud), -1)
            norms[g] = np.linalg.norm(flat, axis=1) / lrs[g]
    return norms["position"], norms["sh_dc"], norms["scale"]


@dataclass
class ActivityTracker:
    """Per-Gaussian activity accumulation between pruning evaluations."""

    pos_sum: np.ndarray
    col_sum: np.ndarray
    scale_sum: np.ndarray
    samples: np.ndarray
    threshold: float

    @staticmethod
    def for_cloud(cloud: GaussianCloud, t0: float) -> "ActivityTracker":
        n = len(cloud)
        return ActivityTracker(np.zeros(n), np.zeros(n), np.zeros(n),
                               np.zeros(n, dtype=np.int64), t0)

    def keep(self, mask: np.ndarray) -> None:
        self.pos_sum = self.pos_sum[mask]
        self.col_sum = self.col_sum[mask]
        self.scale_sum = self.scale_sum[mask]
        self.samples = self.samples[mask]

    def grow(self, n_new: int) -> None:
        self.pos_sum = np.concatenate([self.pos_sum, np.zeros(n_new)])
        self.col_sum = np.concatenate([self.col_sum, np.zeros(n_new)])
        self.scale_sum = np.concatenate([self.scale_sum, np.zeros(n_new)])
        self.samples = np.concatenate([self.samples,
                                       np.zeros(n_new, dtype=np.int64)])

    def reset_window(self) -> None:
        self.pos_sum[:] = 0.0
        self.col_sum[:] = 0.0
        self.scale_sum[:] = 0.0
        self.samples[:] = 0

    def average_activity(self, cfg: TrainConfig) -> np.ndarray:
        wp, wc, ws = cfg.activity_weights
        return (wp * self.pos_sum + wc * self.col_sum
                + ws * self.scale_sum) / cfg.densify_interval


def update_activity(tracker: ActivityTracker, pos_norms: np.ndarray,
                    col_norms: np.ndarray, scale_norms: np.ndarray,
                    frozen: np.ndarray | None = None) -> None:
    """Accumulate one optimizer step's update norms (frozen untracked)."""
    if frozen is None:
        tracker.pos_sum += pos_norms
        tracker.col_sum += col_norms
        tracker.scale_sum += scale_norms
        tracker.samples += 1
    else:
        live = ~frozen
        tracker.pos_sum[live] += pos_norms[live]
        tracker.col_sum[live] += col_norms[live]
        tracker.scale_sum[live] += scale_norms[live]
        tracker.samples[live] += 1


def inactive_prune(cloud: GaussianCloud, tracker: ActivityTracker,
                   iteration: int, cfg: TrainConfig,
                   state: OptimizerState | None = None,
                   stats: "DensifyStats | None" = None):
    """Remove unfrozen Gaussians with AvgSample <= T, then decay T.

    Returns (cloud, tracker, n_removed); optimizer state and densify stats are
    remapped in place when provided. Accumulators reset afterwards.
    """
    avg = tracker.average_activity(cfg)
    full_window = tracker.samples >= cfg.densify_interval
    remove = (~cloud.frozen) & full_window & (avg <= tracker.threshold)
    keep = ~remove
    n_removed = int(remove.sum())
    if n_removed:
        cloud = cloud.select(keep)
        tracker.keep(keep)
        if state is not None:
            state.keep(keep)
        if stats is not None:
            stats.keep(keep)
    tracker.threshold *= cfg.activity_decay
    tracker.reset_window()
    return cloud, tracker, n_removed


@dataclass
class DensifyStats:
    """Accumulated positional-gradient statistics between densify calls."""

    screen_sum: np.ndarray  # sum of screen-space gradient magnitudes
    grad3d_sum: np.ndarray  # sum of world-space position gradients
    denom: np.ndarray

    @staticmethod
    def for_cloud(cloud: GaussianCloud) -> "DensifyStats":
        n = len(cloud)
        return DensifyStats(np.zeros(n), np.zeros((n, 3)), np.zeros(n))

    def accumulate(self, grads: CloudGradients, frozen: np.ndarray) -> None:
        track = grads.visible & ~frozen
        self.screen_sum[track] += grads.screen[track]
        self.grad3d_sum[track] += grads.position[track]
        self.denom[track] += 1

    def keep(self, mask: np.ndarray) -> None:
        self.screen_sum = self.screen_sum[mask]
        self.grad3d_sum = self.grad3d_sum[mask]
        self.denom = self.denom[mask]

    def grow(self, n_new: int) -> None:
        self.screen_sum = np.concatenate([self.screen_sum, np.zeros(n_new)])
        self.grad3d_sum = np.concatenate([self.grad3d_sum, np.zeros((n_new, 3))])
        self.denom = np.concatenate([self.denom, np.zeros(n_new)])

    def reset(self) -> None:
        self.screen_sum[:] = 0.0
        self.grad3d_sum[:] = 0.0
        self.denom[:] = 0.0


def densify_and_prune(cloud: GaussianCloud, stats: DensifyStats,
                      cfg: TrainConfig, scene_extent: float,
                      rng: np.random.Generator,
                      state: OptimizerState | None = None,
                      tracker: ActivityTracker | None = None) -> GaussianCloud:
    """3DGS adaptive control: clone small / split large high-gradient
    Gaussians, prune low-opacity ones. Frozen Gaussians are exempt."""
    n = len(cloud)
    denom = np.maximum(stats.denom, 1.0)
    avg_grad = stats.screen_sum / denom
    max_scale = np.exp(cloud.log_scales).max(axis=1)
    size_limit = cfg.percent_dense * scene_extent
    hot = (avg_grad >= cfg.densify_grad_threshold) & ~cloud.frozen

    clone = hot & (max_scale < size_limit)
    split = hot & (max_scale >= size_limit)

    new_parts = []
    if clone.any():
        child = cloud.select(clone)
        gd = stats.grad3d_sum[clone] / denom[clone, None]
        norm = np.linalg.norm(gd, axis=1, keepdims=True)
        direction = np.where(norm > 0, -gd / np.maximum(norm, 1e-30), 0.0)
        child.positions = child.positions + direction * max_scale[clone, None]
        new_parts.append(child)
    if split.any():
        parent = cloud.select(split)
        for _ in range(2):
            child = parent.copy()
            local = rng.normal(0.0, 1.0, (len(child), 3)) \
                * np.exp(parent.log_scales)
            from .cameras import quat_to_mat
            q = parent.rotations / np.linalg.norm(parent.rotations, axis=1,
                                                  keepdims=True)
            rot = quat_to_mat(q)
            child.positions = parent.positions \
                + np.einsum("nij,nj->ni", rot, local)
            child.log_scales = parent.log_scales - np.log(1.6)
            new_parts.append(child)

    drop = split | ((sigmoid(cloud.opacity_logits) < cfg.opacity_prune_threshold)
                    & ~cloud.frozen)
    keep = ~drop
    merged = cloud.select(keep)
    stats.keep(keep)
    if state is not None:
        state.keep(keep)
    if tracker is not None:
        tracker.keep(keep)
    n_new = 0
    for part in new_parts:
        merged = GaussianCloud.concat(merged, part)
        n_new += len(part)
    if n_new:
        stats.grow(n_new)
        if state is not None:
            state.grow(n_new)
        if tracker is not None:
            tracker.grow(n_new)
    merged.layer_count = cloud.layer_count
    return merged


def reset_opacity(cloud: GaussianCloud, state: OptimizerState | None = None,
                  ceiling: float = 0.01) -> None:
    """Clamp unfrozen opacities to at most `ceiling` (3DGS opacity reset)."""
    live = ~cloud.frozen
    opac = sigmoid(cloud.opacity_logits[live])
    cloud.opacity_logits[live] = inverse_sigmoid(np.minimum(opac, ceiling))
    if state is not None:
        state.m["opacity"][live] = 0.0
        state.v["opacity"][live] = 0.0


def scene_extent_of(cameras) -> float:
    """Camera-spread radius, used for lr scaling and densification sizes."""
    centers = np.stack([c.position for c in cameras])
    centroid = centers.mean(axis=0)
    return 1.1 * float(np.linalg.norm(centers - centroid, axis=1).max())


def init_layer_gaussians(points: np.ndarray, colors: np.ndarray, layer: int,
                         cfg: TrainConfig) -> GaussianCloud:
    """New-layer Gaussians from an initial point cloud: dc color from point
    colors, isotropic scale from the 3-nearest-neighbor mean distance,
    opacity `cfg.init_opacity`."""
    n = len(points)
    if n == 0:
        raise ValueError("empty initial point cloud")
    if n >= 4:
        dist, _ = cKDTree(points).query(points, k=4)
        mean_d = dist[:, 1:].mean(axis=1)
    else:
        mean_d = np.full(n, 0.02)
    mean_d = np.maximum(mean_d, 1e-7)
    k = (cfg.sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = rgb_to_sh_dc(colors)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return GaussianCloud(
        positions=np.array(points, dtype=np.float64),  # copy: optimizer
        rotations=rot,                                 # mutates in place
        log_scales=np.log(mean_d)[:, None].repeat(3, axis=1),
        opacity_logits=np.full(n, inverse_sigmoid(cfg.init_opacity)),
        sh=sh, layers=np.full(n, layer, np.int32),
        frozen=np.zeros(n, bool), layer_count=layer + 1,
        sh_degree=cfg.sh_degree)


def train_layer(dataset, cloud: GaussianCloud | None, layer: int,
                cfg: TrainConfig, log_path=None, callback=None) -> GaussianCloud:
    """Optimize layer `layer` on top of `cloud` (layers < layer frozen).

    Draws one training view per iteration, rasterizes all layers <= layer
    over a per-frame background, and applies Adam to unfrozen Gaussians only.
    Densification, inactive pruning, and the activity threshold decay run
    every `densify_interval` iterations.
    """
    views = [(cam, img) for cam, img, lay in dataset.iter_views()
             if lay == layer]
    if not views:
        raise ValueError(f"dataset has no views for layer {layer}")
    pts, cols = dataset.init_points[layer]
    fresh = init_layer_gaussians(pts, cols, layer, cfg)
    if cloud is None or len(cloud) == 0:
        cloud = fresh
    else:
        if int(cloud.layers.max(initial=-1)) >= layer:
            raise ValueError(f"cloud already contains layer {layer}")
        if not cloud.frozen.all():
            raise ValueError("lower layers must be frozen before training")
        cloud = GaussianCloud.concat(cloud, fresh)
    cloud.layer_count = layer + 1

    rng = np.random.default_rng([cfg.seed, layer])
    extent = scene_extent_of([cam for cam, _ in views])
    state = OptimizerState.for_cloud(cloud)
    tracker = ActivityTracker.for_cloud(cloud, cfg.activity_t0)
    stats = DensifyStats.for_cloud(cloud)
    active = np.ones(layer + 1, dtype=bool)
    fixed_bg = np.asarray(cfg.background_rgb, dtype=np.float64)

    log_rows = []
    for it in range(1, cfg.iterations + 1):
        cam, gt = views[int(rng.integers(len(views)))]
        bg = rng.random(3) if cfg.background_mode == "random" else fixed_bg
        out, ctx = rasterize(cloud, cam, bg, active, return_ctx=True)
        value, g_rgb, g_alpha = loss(out, gt, bg, cfg)
        grads = rasterize_backward(cloud, cam, bg, active, g_rgb, g_alpha,
                                   ctx=ctx)
        lrs = learning_rates(cfg, it, extent)
        p, c, s = adam_step(cloud, grads, state, lrs)
        if cfg.activity_visibility_gate > 0.0:
            # updates only count as activity in proportion to how visibly the
            # Gaussian blended this step; obscured splats score ~0
            gate = np.minimum(1.0, grads.blend_max / cfg.activity_visibility_gate)
            p, c, s = p * gate, c * gate, s * gate
        update_activity(tracker, p, c, s, cloud.frozen)
        stats.accumulate(grads, cloud.frozen)

        if it % cfg.densify_interval == 0:
            in_densify = cfg.densify_from < it <= cfg.densify_end
            if cfg.inactive_prune_enabled and it > cfg.densify_from:
                cloud, tracker, _ = inactive_prune(cloud, tracker, it, cfg,
                                                   state, stats)
            if in_densify:
                cloud = densify_and_prune(cloud, stats, cfg, extent, rng,
                                          state, tracker)
            tracker.reset_window()
            stats.reset()
            if (cfg.opacity_reset_enabled and it <= cfg.densify_end
                    and it % cfg.opacity_reset_interval == 0):
                reset_opacity(cloud, state)

        if log_path is not None and (it % cfg.log_interval == 0
                                     or it == cfg.iterations):
            view_psnr = psnr(out.rgb, composite_over(gt, bg))
            log_rows.append([it, f"{value:.6f}", f"{view_psnr:.3f}",
                             len(cloud), f"{tracker.threshold:.17g}"])
        if callback is not None:
            callback(it, cloud, value)

    if log_path is not None:
        with open(log_path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["iteration", "loss", "psnr", "gaussians", "threshold"])
            wr.writerows(log_rows)
    return cloud


def train_layered(dataset, cfg: TrainConfig, layer_subset=None,
                  log_dir=None, callback=None):
    """Train all layers in order, freezing each result before the next.

    Returns (cloud, per-layer report rows: (layer, cumulative count)).
    """
    layers = list(range(dataset.layer_count)) if layer_subset is None \
        else sorted(layer_subset)
    if not layers:
        raise ValueError("need at least one layer")
    cloud = None
    report = []
    for k in layers:
        log_path = None
        if log_dir is not None:
            from pathlib import Path
            log_path = Path(log_dir) / f"train_layer_{k}.csv"
        cloud = train_layer(dataset, cloud, k, cfg, log_path=log_path,
                            callback=callback)
        cloud.frozen[:] = True
        report.append((k, len(cloud)))
    cloud.frozen[:] = False
    cloud.frozen[cloud.layers < layers[-1]] = True
    return cloud, report
