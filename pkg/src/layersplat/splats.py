"""Gaussian cloud parameterization, projection, SH color, and rasterization.

The rasterizer splits into a vectorized preprocessing stage (projection,
covariance, SH evaluation), the per-tile compositing kernels (numba or numpy
backend), and a vectorized parameter-gradient chain for the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import Camera, quat_to_mat
from .kernels import raster

TILE = 16
ALPHA_MIN = 1.0 / 255.0
COV2D_DILATION = 0.3  # screen-space low-pass added to cov2d diagonals
DET_MIN = 1e-12

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


class GaussianCulled(Exception):
    """Raised when projecting a Gaussian behind the camera near plane."""


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def inverse_sigmoid(p):
    return np.log(p / (1.0 - p))


def rgb_to_sh_dc(rgb):
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


@dataclass
class Gaussian:
    """A single splat; clouds store these fields as arrays."""

    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    sh: np.ndarray  # ((degree+1)^2, 3)
    layer: int = 0
    frozen: bool = False


@dataclass
class GaussianCloud:
    """Structure-of-arrays collection of Gaussians across layers."""

    positions: np.ndarray      # (N, 3)
    rotations: np.ndarray      # (N, 4) quaternions, normalized on use
    log_scales: np.ndarray     # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    sh: np.ndarray             # (N, (degree+1)^2, 3)
    layers: np.ndarray         # (N,) int32
    frozen: np.ndarray         # (N,) bool
    layer_count: int = 1
    sh_degree: int = 3

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.asarray(self.opacity_logits,
                                         dtype=np.float64).reshape(n)
        k = (self.sh_degree + 1) ** 2
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(n, k, 3)
        self.layers = np.asarray(self.layers, dtype=np.int32).reshape(n)
        self.frozen = np.asarray(self.frozen, dtype=bool).reshape(n)
        if n and self.layers.max() >= self.layer_count:
            raise ValueError("gaussian layer index exceeds layer_count")

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(self.positions[i].copy(), self.rotations[i].copy(),
                        self.log_scales[i].copy(), float(self.opacity_logits[i]),
                        self.sh[i].copy(), int(self.layers[i]),
                        bool(self.frozen[i]))

    def select(self, mask) -> "GaussianCloud":
        return GaussianCloud(self.positions[mask], self.rotations[mask],
                             self.log_scales[mask], self.opacity_logits[mask],
                             self.sh[mask], self.layers[mask], self.frozen[mask],
                             self.layer_count, self.sh_degree)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.positions.copy(), self.rotations.copy(),
                             self.log_scales.copy(), self.opacity_logits.copy(),
                             self.sh.copy(), self.layers.copy(),
                             self.frozen.copy(), self.layer_count,
                             self.sh_degree)

    @staticmethod
    def concat(a: "GaussianCloud", b: "GaussianCloud") -> "GaussianCloud":
        if a.sh_degree != b.sh_degree:
            raise ValueError("sh_degree mismatch")
        return GaussianCloud(
            np.concatenate([a.positions, b.positions]),
            np.concatenate([a.rotations, b.rotations]),
            np.concatenate([a.log_scales, b.log_scales]),
            np.concatenate([a.opacity_logits, b.opacity_logits]),
            np.concatenate([a.sh, b.sh]),
            np.concatenate([a.layers, b.layers]),
            np.concatenate([a.frozen, b.frozen]),
            max(a.layer_count, b.layer_count), a.sh_degree)

    @staticmethod
    def empty(layer_count=1, sh_degree=3) -> "GaussianCloud":
        k = (sh_degree + 1) ** 2
        return GaussianCloud(np.zeros((0, 3)), np.zeros((0, 4)),
                             np.zeros((0, 3)), np.zeros(0), np.zeros((0, k, 3)),
                             np.zeros(0, np.int32), np.zeros(0, bool),
                             layer_count, sh_degree)

    @staticmethod
    def from_gaussians(gaussians, layer_count=None, sh_degree=3) -> "GaussianCloud":
        lc = layer_count or (max((g.layer for g in gaussians), default=0) + 1)
        return GaussianCloud(
            np.array([g.position for g in gaussians]).reshape(-1, 3),
            np.array([g.rotation for g in gaussians]).reshape(-1, 4),
            np.array([g.log_scale for g in gaussians]).reshape(-1, 3),
            np.array([g.opacity_logit for g in gaussians]),
            np.array([g.sh for g in gaussians]).reshape(
                -1, (sh_degree + 1) ** 2, 3),
            np.array([g.layer for g in gaussians], np.int32),
            np.array([g.frozen for g in gaussians], bool), lc, sh_degree)


@dataclass
class CutPlane:
    """Half-space filter on Gaussian centers: discard n.x > offset for layers
    flagged in `layer_mask` (None applies to every layer)."""

    normal: np.ndarray
    offset: float
    layer_mask: np.ndarray | None = None

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=np.float64).reshape(3)
        n = np.linalg.norm(self.normal)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("cut-plane normal must be unit length")

    def keeps(self, cloud: GaussianCloud) -> np.ndarray:
        cut_side = cloud.positions @ self.normal > self.offset
        if self.layer_mask is not None:
            applies = np.asarray(self.layer_mask, dtype=bool)[cloud.layers]
            cut_side &= applies
        return ~cut_side


@dataclass
class RenderOutput:
    rgb: np.ndarray       # (H, W, 3)
    alpha: np.ndarray     # (H, W)
    contrib: np.ndarray   # (H, W) contributing-splat counts
    transmittance: np.ndarray  # (H, W) residual T after compositing


@dataclass
class CloudGradients:
    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray
    screen: np.ndarray     # |dL/d mean2d| in half-image units, for densification
    visible: np.ndarray    # splats that survived culling this pass
    blend_max: np.ndarray  # per-splat max compositing weight T*alpha


def compute_cov3d(log_scale, rotation) -> np.ndarray:
    """World covariance R S S^T R^T; accepts (...,3)/(...,4) batches."""
    log_scale = np.asarray(log_scale, dtype=np.float64)
    rotation = np.asarray(rotation, dtype=np.float64)
    q = rotation / np.linalg.norm(rotation, axis=-1, keepdims=True)
    r = quat_to_mat(q)
    s = np.exp(log_scale)
    m = r * s[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Real SH basis values up to degree 3, 3DGS sign convention. (N, 16)."""
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    b = np.empty((len(d), 16), dtype=np.float64)
    b[:, 0] = SH_C0
    b[:, 1] = -SH_C1 * y
    b[:, 2] = SH_C1 * z
    b[:, 3] = -SH_C1 * x
    b[:, 4] = SH_C2[0] * xy
    b[:, 5] = SH_C2[1] * yz
    b[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    b[:, 7] = SH_C2[3] * xz
    b[:, 8] = SH_C2[4] * (xx - yy)
    b[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
    b[:, 10] = SH_C3[1] * xy * z
    b[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    b[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    b[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    b[:, 14] = SH_C3[5] * z * (xx - yy)
    b[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return b


def sh_basis_grad(dirs: np.ndarray) -> np.ndarray:
    """d basis / d direction components, (N, 16, 3)."""
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    zero = np.zeros_like(x)
    g = np.zeros((len(d), 16, 3), dtype=np.float64)

    def put(k, gx, gy, gz):
        g[:, k, 0], g[:, k, 1], g[:, k, 2] = gx, gy, gz

    put(1, zero, -SH_C1 * np.ones_like(x), zero)
    put(2, zero, zero, SH_C1 * np.ones_like(x))
    put(3, -SH_C1 * np.ones_like(x), zero, zero)
    put(4, SH_C2[0] * y, SH_C2[0] * x, zero)
    put(5, zero, SH_C2[1] * z, SH_C2[1] * y)
    put(6, SH_C2[2] * -2 * x, SH_C2[2] * -2 * y, SH_C2[2] * 4 * z)
    put(7, SH_C2[3] * z, zero, SH_C2[3] * x)
    put(8, SH_C2[4] * 2 * x, SH_C2[4] * -2 * y, zero)
    put(9, SH_C3[0] * 6 * x * y, SH_C3[0] * (3 * x * x - 3 * y * y), zero)
    put(10, SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y)
    put(11, SH_C3[2] * -2 * x * y, SH_C3[2] * (4 * z * z - x * x - 3 * y * y),
        SH_C3[2] * 8 * y * z)
    put(12, SH_C3[3] * -6 * x * z, SH_C3[3] * -6 * y * z,
        SH_C3[3] * (6 * z * z - 3 * x * x - 3 * y * y))
    put(13, SH_C3[4] * (4 * z * z - 3 * x * x - y * y), SH_C3[4] * -2 * x * y,
        SH_C3[4] * 8 * x * z)
    put(14, SH_C3[5] * 2 * x * z, SH_C3[5] * -2 * y * z,
        SH_C3[5] * (x * x - y * y))
    put(15, SH_C3[6] * (3 * x * x - 3 * y * y), SH_C3[6] * -6 * x * y, zero)
    return g


def sh_eval(sh, dirs, degree: int) -> np.ndarray:
    """View-dependent rgb: SH expansion offset by +0.5, clamped at 0."""
    sh = np.asarray(sh, dtype=np.float64)
    single = sh.ndim == 2
    sh3 = sh.reshape((-1,) + sh.shape[-2:])
    k = (degree + 1) ** 2
    basis = sh_basis(dirs)[:, :k]
    raw = np.einsum("nk,nkc->nc", basis, sh3[:, :k, :]) + 0.5
    out = np.maximum(raw, 0.0)
    return out[0] if single else out


def project_gaussians(cloud: GaussianCloud, cam: Camera):
    """Vectorized EWA projection. Returns (mean2d, cov2d, depth, in_front)."""
    w = cam.world_to_cam
    t = (cloud.positions - cam.position) @ w.T
    depth = t[:, 2]
    in_front = depth > cam.near
    tz = np.where(in_front, depth, 1.0)
    f = cam.focal
    mean2d = np.stack([f * t[:, 0] / tz + cam.width / 2.0,
                       f * t[:, 1] / tz + cam.height / 2.0], axis=-1)
    j = np.zeros((len(cloud), 2, 3), dtype=np.float64)
    j[:, 0, 0] = f / tz
    j[:, 1, 1] = f / tz
    j[:, 0, 2] = -f * t[:, 0] / tz ** 2
    j[:, 1, 2] = -f * t[:, 1] / tz ** 2
    cov3d = compute_cov3d(cloud.log_scales, cloud.rotations)
    tw = j @ w
    cov2d = tw @ cov3d @ np.swapaxes(tw, -1, -2)
    cov2d[:, 0, 0] += COV2D_DILATION
    cov2d[:, 1, 1] += COV2D_DILATION
    return mean2d, cov2d, depth, in_front


def project_gaussian(g: Gaussian, cam: Camera):
    """Single-splat projection; raises GaussianCulled behind the near plane."""
    cloud = GaussianCloud.from_gaussians([g], layer_count=g.layer + 1,
                                         sh_degree=int(np.sqrt(len(g.sh)) - 1))
    mean2d, cov2d, depth, in_front = project_gaussians(cloud, cam)
    if not in_front[0]:
        raise GaussianCulled("gaussian lies behind the camera near plane")
    return mean2d[0], cov2d[0], float(depth[0])


@dataclass
class RasterContext:
    """Cached preprocessing shared between a forward and its backward pass."""

    idx: np.ndarray          # sorted-visible -> cloud index
    mean2d: np.ndarray
    conic: np.ndarray        # (a, b, c) of cov2d inverse
    cov2d_abc: np.ndarray
    opac: np.ndarray
    rgb: np.ndarray
    raw_rgb: np.ndarray      # before the 0-clamp
    basis: np.ndarray
    dirs: np.ndarray
    dist: np.ndarray
    t_cam: np.ndarray
    tw: np.ndarray           # J @ W per splat
    cov3d: np.ndarray
    quat_n: np.ndarray
    quat_raw_norm: np.ndarray
    scales: np.ndarray
    rot_mat: np.ndarray
    pair_splat: np.ndarray
    tile_start: np.ndarray
    cam: Camera
    background: np.ndarray
    shape: tuple


def _filter_mask(cloud: GaussianCloud, active_layers, cut: CutPlane | None):
    active_layers = np.asarray(active_layers, dtype=bool)
    if active_layers.shape != (cloud.layer_count,):
        raise ValueError("active_layers must have one flag per layer")
    if not active_layers.any():
        raise ValueError("active_layers must enable at least one layer")
    mask = active_layers[cloud.layers]
    if cut is not None:
        mask &= cut.keeps(cloud)
    return mask


def _build_tile_lists(mean2d, radius, width, height):
    """Depth-ordered (tile, splat) pair lists for the compositing kernels."""
    n_tx = (width + TILE - 1) // TILE
    n_ty = (height + TILE - 1) // TILE
    x0 = np.clip(np.floor((mean2d[:, 0] - radius - 0.5) / TILE).astype(np.int64),
                 0, n_tx - 1)
    x1 = np.clip(np.floor((mean2d[:, 0] + radius + 0.5) / TILE).astype(np.int64),
                 0, n_tx - 1)
    y0 = np.clip(np.floor((mean2d[:, 1] - radius - 0.5) / TILE).astype(np.int64),
                 0, n_ty - 1)
    y1 = np.clip(np.floor((mean2d[:, 1] + radius + 0.5) / TILE).astype(np.int64),
                 0, n_ty - 1)
    onscreen = ((mean2d[:, 0] + radius >= 0) & (mean2d[:, 0] - radius < width)
                & (mean2d[:, 1] + radius >= 0) & (mean2d[:, 1] - radius < height))
    nx = np.where(onscreen, x1 - x0 + 1, 0)
    ny = np.where(onscreen, y1 - y0 + 1, 0)
    spans = nx * ny
    total = int(spans.sum())
    n_tiles = n_tx * n_ty
    if total == 0:
        return (np.zeros(0, np.int64), np.zeros(n_tiles + 1, np.int64))
    splat_of_pair = np.repeat(np.arange(len(mean2d)), spans)
    offsets = np.concatenate([[0], np.cumsum(spans)[:-1]])
    ordinal = np.arange(total) - np.repeat(offsets, spans)
    nx_rep = np.repeat(np.maximum(nx, 1), spans)
    dx = ordinal % nx_rep
    dy = ordinal // nx_rep
    tile_of_pair = ((np.repeat(y0, spans) + dy) * n_tx
                    + np.repeat(x0, spans) + dx)
    order = np.argsort(tile_of_pair, kind="stable")  # keeps depth order per tile
    pair_splat = splat_of_pair[order]
    tile_sorted = tile_of_pair[order]
    tile_start = np.searchsorted(tile_sorted, np.arange(n_tiles + 1))
    return pair_splat, tile_start


def _preprocess(cloud: GaussianCloud, cam: Camera, background, active_layers,
                cut: CutPlane | None,
                order_hint: np.ndarray | None = None) -> RasterContext:
    background = np.asarray(background, dtype=np.float64).reshape(3)
    keep = _filter_mask(cloud, active_layers, cut)
    opac_all = sigmoid(cloud.opacity_logits)

    w = cam.world_to_cam
    f = cam.focal
    t_all = (cloud.positions - cam.position) @ w.T
    depth = t_all[:, 2]
    cand_mask = keep & (depth > cam.near) & (opac_all * 255.0 > 1.0)
    cand = np.nonzero(cand_mask)[0]

    # heavy math on candidates only
    t_cam = t_all[cand]
    tz = t_cam[:, 2]
    mean2d = np.stack([f * t_cam[:, 0] / tz + cam.width / 2.0,
                       f * t_cam[:, 1] / tz + cam.height / 2.0], axis=-1)
    rot_raw = cloud.rotations[cand]
    quat_raw_norm = np.linalg.norm(rot_raw, axis=-1)
    quat_n = rot_raw / quat_raw_norm[:, None]
    rot_mat = quat_to_mat(quat_n)
    scales = np.exp(cloud.log_scales[cand])
    l_mat = rot_mat * scales[:, None, :]
    cov3d = l_mat @ np.swapaxes(l_mat, -1, -2)

    j = np.zeros((len(cand), 2, 3), dtype=np.float64)
    j[:, 0, 0] = f / tz
    j[:, 1, 1] = f / tz
    j[:, 0, 2] = -f * t_cam[:, 0] / tz ** 2
    j[:, 1, 2] = -f * t_cam[:, 1] / tz ** 2
    tw = j @ w
    cov2d = tw @ cov3d @ np.swapaxes(tw, -1, -2)
    a = cov2d[:, 0, 0] + COV2D_DILATION
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1] + COV2D_DILATION
    det = a * c - b * b
    ok = det > DET_MIN

    if order_hint is not None:
        # externally supplied compositing order (e.g. a shared stereo sort)
        pos_of = np.full(len(cloud), -1, dtype=np.int64)
        pos_of[cand[ok]] = np.nonzero(ok)[0]
        sel = pos_of[order_hint]
        sel = sel[sel >= 0]
    else:
        good = np.nonzero(ok)[0]
        sel = good[np.argsort(depth[cand[good]], kind="stable")]
    idx = cand[sel]

    a, b, c, det = a[sel], b[sel], c[sel], det[sel]
    conic = np.stack([c / det, -b / det, a / det], axis=-1)
    lam_max = 0.5 * (a + c + np.sqrt((a - c) ** 2 + 4 * b * b))
    opac = opac_all[idx]
    radius = np.sqrt(2.0 * np.log(255.0 * opac) * lam_max)

    diff = cloud.positions[idx] - cam.position
    dist = np.linalg.norm(diff, axis=-1)
    dirs = diff / dist[:, None]
    k = (cloud.sh_degree + 1) ** 2
    basis = sh_basis(dirs)[:, :k]
    raw_rgb = np.einsum("nk,nkc->nc", basis, cloud.sh[idx]) + 0.5
    rgb = np.maximum(raw_rgb, 0.0)

    pair_splat, tile_start = _build_tile_lists(mean2d[sel], radius,
                                               cam.width, cam.height)
    return RasterContext(idx=idx, mean2d=np.ascontiguousarray(mean2d[sel]),
                         conic=np.ascontiguousarray(conic),
                         cov2d_abc=np.stack([a, b, c], axis=-1),
                         opac=np.ascontiguousarray(opac),
                         rgb=np.ascontiguousarray(rgb), raw_rgb=raw_rgb,
                         basis=basis, dirs=dirs, dist=dist,
                         t_cam=t_cam[sel], tw=tw[sel],
                         cov3d=cov3d[sel],
                         quat_n=quat_n[sel], quat_raw_norm=quat_raw_norm[sel],
                         scales=scales[sel], rot_mat=rot_mat[sel],
                         pair_splat=pair_splat, tile_start=tile_start,
                         cam=cam, background=background,
                         shape=(cam.height, cam.width))


def rasterize(cloud: GaussianCloud, cam: Camera, background=(0.0, 0.0, 0.0),
              active_layers=None, cut: CutPlane | None = None,
              return_ctx: bool = False, order_hint: np.ndarray | None = None):
    """Depth-sorted front-to-back tile rasterization.

    `active_layers` defaults to all layers. Splats are filtered by layer mask,
    optional cut plane and frustum, globally depth-sorted (stable), then
    composited per 16x16 tile over `background`. `order_hint` overrides the
    internal depth sort with an externally computed permutation.
    """
    if active_layers is None:
        active_layers = np.ones(cloud.layer_count, dtype=bool)
    ctx = _preprocess(cloud, cam, background, active_layers, cut, order_hint)
    rgb, alpha, t_res, contrib = raster.forward(
        ctx.mean2d, ctx.conic, ctx.opac, ctx.rgb, ctx.pair_splat,
        ctx.tile_start, cam.width, cam.height, ctx.background)
    out = RenderOutput(rgb=rgb, alpha=alpha, contrib=contrib,
                       transmittance=t_res)
    return (out, ctx) if return_ctx else out


def _quat_grad(quat_n, g_rot):
    """dL/d(normalized quat) given dL/dR, vectorized."""
    w, x, y, z = quat_n[:, 0], quat_n[:, 1], quat_n[:, 2], quat_n[:, 3]
    r = g_rot  # (n, 3, 3)
    gw = 2 * (-z * r[:, 0, 1] + y * r[:, 0, 2] + z * r[:, 1, 0]
              - x * r[:, 1, 2] - y * r[:, 2, 0] + x * r[:, 2, 1])
    gx = 2 * (y * r[:, 0, 1] + z * r[:, 0, 2] + y * r[:, 1, 0]
              - 2 * x * r[:, 1, 1] - w * r[:, 1, 2] + z * r[:, 2, 0]
              + w * r[:, 2, 1] - 2 * x * r[:, 2, 2])
    gy = 2 * (-2 * y * r[:, 0, 0] + x * r[:, 0, 1] + w * r[:, 0, 2]
              + x * r[:, 1, 0] + z * r[:, 1, 2] - w * r[:, 2, 0]
              + z * r[:, 2, 1] - 2 * y * r[:, 2, 2])
    gz = 2 * (-2 * z * r[:, 0, 0] - w * r[:, 0, 1] + x * r[:, 0, 2]
              + w * r[:, 1, 0] - 2 * z * r[:, 1, 1] + y * r[:, 1, 2]
              + x * r[:, 2, 0] + y * r[:, 2, 1])
    return np.stack([gw, gx, gy, gz], axis=-1)


def rasterize_backward(cloud: GaussianCloud, cam: Camera, background,
                       active_layers, grad_rgb, grad_alpha,
                       ctx: RasterContext | None = None) -> CloudGradients:
    """Exact adjoint of `rasterize` with the sort order held fixed.

    Returns per-Gaussian parameter gradients (zero for frozen splats) plus the
    screen-space positional gradient magnitudes used by densification.
    """
    if active_layers is None:
        active_layers = np.ones(cloud.layer_count, dtype=bool)
    if ctx is None:
        ctx = _preprocess(cloud, cam, background, active_layers, None)
    grad_rgb = np.ascontiguousarray(grad_rgb, dtype=np.float64)
    grad_alpha = np.ascontiguousarray(grad_alpha, dtype=np.float64)
    if grad_rgb.shape != ctx.shape + (3,) or grad_alpha.shape != ctx.shape:
        raise ValueError("upstream gradient shape mismatch")

    g_pair = raster.backward(
        ctx.mean2d, ctx.conic, ctx.opac, ctx.rgb, ctx.pair_splat,
        ctx.tile_start, cam.width, cam.height, ctx.background,
        grad_rgb, grad_alpha)
    m = len(ctx.idx)
    # pair -> splat reduction in fixed pair order: thread-count independent
    blend_max = np.zeros(m)
    if len(ctx.pair_splat):
        g_all = np.stack([np.bincount(ctx.pair_splat, weights=g_pair[:, c],
                                      minlength=m) for c in range(9)], axis=1)
        np.maximum.at(blend_max, ctx.pair_splat, g_pair[:, 9])
    else:
        g_all = np.zeros((m, 9))
    g_mean2d, g_conic = g_all[:, 0:2], g_all[:, 2:5]
    g_opac, g_rgb = g_all[:, 5], g_all[:, 6:9]
    sub = cloud.select(ctx.idx)

    # color chain: rgb -> sh coefficients and view direction -> position
    act = (ctx.raw_rgb > 0.0).astype(np.float64)
    mg = g_rgb * act
    g_sh = ctx.basis[:, :, None] * mg[:, None, :]
    dbasis = sh_basis_grad(ctx.dirs)[:, :g_sh.shape[1], :]
    g_dir = np.einsum("nc,nkc,nkd->nd", mg, sub.sh, dbasis)
    g_p_color = (g_dir - ctx.dirs * np.einsum("nd,nd->n", ctx.dirs,
                                              g_dir)[:, None]) / ctx.dist[:, None]

    # opacity chain
    g_logit = g_opac * ctx.opac * (1.0 - ctx.opac)

    # conic -> cov2d entries (A, B, C)
    a, b, c = ctx.cov2d_abc[:, 0], ctx.cov2d_abc[:, 1], ctx.cov2d_abc[:, 2]
    det = a * c - b * b
    inv_det2 = 1.0 / det ** 2
    ga, gb, gc = g_conic[:, 0], g_conic[:, 1], g_conic[:, 2]
    g_a2 = inv_det2 * (-c * c * ga + b * c * gb - b * b * gc)
    g_b2 = inv_det2 * (2 * b * c * ga - (a * c + b * b) * gb + 2 * a * b * gc)
    g_c2 = inv_det2 * (-b * b * ga + a * b * gb - a * a * gc)
    g2 = np.empty((m, 2, 2), dtype=np.float64)
    g2[:, 0, 0] = g_a2
    g2[:, 0, 1] = g2[:, 1, 0] = 0.5 * g_b2
    g2[:, 1, 1] = g_c2

    # cov2d = TW cov3d TW^T (TW = J W)
    g_v3 = np.einsum("nai,nab,nbj->nij", ctx.tw, g2, ctx.tw)
    g_tw = 2.0 * np.einsum("nab,nbi,nij->naj", g2, ctx.tw, ctx.cov3d)
    w = cam.world_to_cam
    g_j = np.einsum("nak,jk->naj", g_tw, w)

    f = cam.focal
    tx, ty, tz = ctx.t_cam[:, 0], ctx.t_cam[:, 1], ctx.t_cam[:, 2]
    g_t = np.zeros((m, 3), dtype=np.float64)
    g_t[:, 0] = g_j[:, 0, 2] * (-f / tz ** 2)
    g_t[:, 1] = g_j[:, 1, 2] * (-f / tz ** 2)
    g_t[:, 2] = ((g_j[:, 0, 0] + g_j[:, 1, 1]) * (-f / tz ** 2)
                 + g_j[:, 0, 2] * (2 * f * tx / tz ** 3)
                 + g_j[:, 1, 2] * (2 * f * ty / tz ** 3))
    # mean2d = (f tx / tz + cx, f ty / tz + cy)
    g_t[:, 0] += g_mean2d[:, 0] * f / tz
    g_t[:, 1] += g_mean2d[:, 1] * f / tz
    g_t[:, 2] += -(g_mean2d[:, 0] * f * tx + g_mean2d[:, 1] * f * ty) / tz ** 2
    g_pos = g_t @ w + g_p_color

    # cov3d = L L^T with L = R diag(s)
    l_mat = ctx.rot_mat * ctx.scales[:, None, :]
    g_l = 2.0 * np.einsum("nij,njk->nik", g_v3, l_mat)
    g_rot_mat = g_l * ctx.scales[:, None, :]
    g_scales = np.einsum("nij,nij->nj", g_l, ctx.rot_mat)
    g_log_scale = g_scales * ctx.scales

    g_qn = _quat_grad(ctx.quat_n, g_rot_mat)
    qdot = np.einsum("nq,nq->n", ctx.quat_n, g_qn)
    g_quat = (g_qn - ctx.quat_n * qdot[:, None]) / ctx.quat_raw_norm[:, None]

    screen = np.hypot(g_mean2d[:, 0] * 0.5 * cam.width,
                      g_mean2d[:, 1] * 0.5 * cam.height)

    n = len(cloud)
    k = (cloud.sh_degree + 1) ** 2
    grads = CloudGradients(position=np.zeros((n, 3)),
                           rotation=np.zeros((n, 4)),
                           log_scale=np.zeros((n, 3)),
                           opacity_logit=np.zeros(n),
                           sh=np.zeros((n, k, 3)),
                           screen=np.zeros(n),
                           visible=np.zeros(n, dtype=bool),
                           blend_max=np.zeros(n))
    grads.position[ctx.idx] = g_pos
    grads.rotation[ctx.idx] = g_quat
    grads.log_scale[ctx.idx] = g_log_scale
    grads.opacity_logit[ctx.idx] = g_logit
    grads.sh[ctx.idx] = g_sh
    grads.screen[ctx.idx] = screen
    grads.visible[ctx.idx] = True
    grads.blend_max[ctx.idx] = blend_max

    fr = cloud.frozen
    grads.position[fr] = 0.0
    grads.rotation[fr] = 0.0
    grads.log_scale[fr] = 0.0
    grads.opacity_logit[fr] = 0.0
    grads.sh[fr] = 0.0
    grads.screen[fr] = 0.0
    return grads
