"""Serialization: layered PLY, quantization, SH codebooks, viewer binaries.

The PLY layout is the standard 3DGS vertex schema plus one additive `layer`
uchar property, so layer-unaware tools can still read the files. Byte-level
details of both formats are documented in docs/formats.md.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .splats import GaussianCloud

PLY_TYPES = {"float": "<f4", "double": "<f8", "uchar": "<u1", "char": "<i1",
             "ushort": "<u2", "short": "<i2", "uint": "<u4", "int": "<i4"}

LSPL_MAGIC = b"LSPL"
LSPL_VERSION = 1


def _rest_count(sh_degree: int) -> int:
    return (sh_degree + 1) ** 2 - 1


def write_ply(cloud: GaussianCloud) -> bytes:
    """Binary little-endian 3DGS PLY with a `layer` uchar per vertex."""
    if cloud.layer_count > 256:
        raise ValueError("layer property is uchar: at most 256 layers")
    n = len(cloud)
    n_rest = _rest_count(cloud.sh_degree)
    names = (["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
             + [f"f_rest_{i}" for i in range(3 * n_rest)]
             + ["opacity", "scale_0", "scale_1", "scale_2",
                "rot_0", "rot_1", "rot_2", "rot_3"])
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header += ["property uchar layer", "end_header", ""]

    rec = np.zeros(n, dtype=[(name, "<f4") for name in names]
                   + [("layer", "<u1")])
    rec["x"], rec["y"], rec["z"] = cloud.positions.astype(np.float32).T
    for c in range(3):
        rec[f"f_dc_{c}"] = cloud.sh[:, 0, c].astype(np.float32)
    # channel-major rest ordering, matching 3DGS exporters
    rest = cloud.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, 3 * n_rest)
    for i in range(3 * n_rest):
        rec[f"f_rest_{i}"] = rest[:, i].astype(np.float32)
    rec["opacity"] = cloud.opacity_logits.astype(np.float32)
    for i in range(3):
        rec[f"scale_{i}"] = cloud.log_scales[:, i].astype(np.float32)
    for i in range(4):
        rec[f"rot_{i}"] = cloud.rotations[:, i].astype(np.float32)
    rec["layer"] = cloud.layers.astype(np.uint8)
    return "\n".join(header).encode("ascii") + rec.tobytes()


def read_ply(data: bytes) -> GaussianCloud:
    """Parse a binary 3DGS PLY; files without `layer` load as single-layer."""
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise ValueError("malformed PLY header")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    n = None
    fields = []
    fmt_ok = False
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise ValueError(f"unsupported PLY format {parts[1]!r}")
            fmt_ok = True
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise ValueError("only vertex elements are supported")
            n = int(parts[2])
        elif parts[0] == "property":
            if parts[1] == "list":
                raise ValueError("list properties are not supported")
            if parts[1] not in PLY_TYPES:
                raise ValueError(f"unknown property type {parts[1]!r}")
            fields.append((parts[2], PLY_TYPES[parts[1]]))
    if n is None or not fmt_ok:
        raise ValueError("malformed PLY header")
    dtype = np.dtype(fields)
    payload = data[end + len(b"end_header\n"):]
    if len(payload) < n * dtype.itemsize:
        raise ValueError("truncated PLY payload")
    rec = np.frombuffer(payload[:n * dtype.itemsize], dtype=dtype)

    names = {f[0] for f in fields}
    for req in ("x", "y", "z", "opacity", "f_dc_0", "scale_0", "rot_0"):
        if req not in names:
            raise ValueError(f"missing mandatory property {req!r}")
    rest_names = sorted((nm for nm in names if nm.startswith("f_rest_")),
                        key=lambda s: int(s.rsplit("_", 1)[1]))
    n_rest3 = len(rest_names)
    if n_rest3 % 3:
        raise ValueError("f_rest property count must be divisible by 3")
    degree = int(round(np.sqrt(n_rest3 / 3 + 1))) - 1
    if 3 * _rest_count(degree) != n_rest3 or degree > 3:
        raise ValueError(f"unsupported SH coefficient count {n_rest3}")

    pos = np.stack([rec["x"], rec["y"], rec["z"]], axis=-1).astype(np.float64)
    k = (degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    for c in range(3):
        sh[:, 0, c] = rec[f"f_dc_{c}"]
    if n_rest3:
        rest = np.stack([rec[nm] for nm in rest_names], axis=-1)
        sh[:, 1:, :] = rest.reshape(n, 3, k - 1).transpose(0, 2, 1)
    scales = np.stack([rec[f"scale_{i}"] for i in range(3)], axis=-1)
    rots = np.stack([rec[f"rot_{i}"] for i in range(4)], axis=-1)
    if "layer" in names:
        layers = rec["layer"].astype(np.int32)
        layer_count = int(layers.max()) + 1 if n else 1
    else:
        layers = np.zeros(n, np.int32)
        layer_count = 1
    return GaussianCloud(pos, rots.astype(np.float64),
                         scales.astype(np.float64),
                         rec["opacity"].astype(np.float64), sh, layers,
                         np.zeros(n, bool), layer_count, degree)


def save_ply(cloud: GaussianCloud, path) -> None:
    with open(path, "wb") as f:
        f.write(write_ply(cloud))


def load_ply(path) -> GaussianCloud:
    with open(path, "rb") as f:
        return read_ply(f.read())


def _quant_u16(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip(np.round((x - lo) / span * 65535.0), 0, 65535).astype(np.uint16)


def _dequant_u16(q: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    t = q.astype(np.float64) / 65535.0
    return lo * (1.0 - t) + hi * t  # exact at both endpoints


@dataclass
class CompressedCloud:
    """Quantized splat attributes with an optional shared SH codebook.

    Splats are stored sorted by layer so per-layer sections are contiguous.
    16-bit floats hold position/scale/rotation/opacity; SH values use 16-bit
    linear quantization per attribute (6 bytes per rgb triplet). The codebook
    is shared across all layers.
    """

    profile: str
    layer_count: int
    sh_degree: int
    layers: np.ndarray          # (N,) int32, non-decreasing
    positions: np.ndarray       # (N, 3) float16
    rotations: np.ndarray       # (N, 4) float16
    log_scales: np.ndarray      # (N, 3) float16
    opacities: np.ndarray       # (N,) float16 (logits)
    dc_q: np.ndarray            # (N, 3) uint16
    dc_range: np.ndarray        # (2, 3) float32 lo/hi
    rest_q: np.ndarray          # low: (N, R) uint16; clustered: (k, R) uint16
    rest_range: np.ndarray      # (2, R) float32 lo/hi
    indices: np.ndarray | None  # clustered: (N,) uint32 codebook index

    def __len__(self):
        return len(self.positions)

    @property
    def codebook_size(self) -> int:
        return len(self.rest_q) if self.profile == "clustered" else 0

    def layer_counts(self) -> np.ndarray:
        return np.bincount(self.layers, minlength=self.layer_count)


def kmeans_sh(cloud: GaussianCloud, k: int = 16384, iters: int = 10,
              seed: int = 0):
    """Cross-layer K-means over SH rest coefficient vectors.

    k-means++ seeding, Lloyd iterations until centroid movement < 1e-6 or
    `iters` is exhausted; exact when the number of distinct vectors is <= k.
    Returns (codebook (k_eff, R), indices (N,)).
    """
    if len(cloud) == 0:
        raise ValueError("cannot cluster an empty cloud")
    if k < 1:
        raise ValueError("k must be at least 1")
    vec = cloud.sh[:, 1:, :].reshape(len(cloud), -1)
    uniq, inverse = np.unique(vec, axis=0, return_inverse=True)
    if len(uniq) <= k:
        return uniq.copy(), inverse.astype(np.uint32)

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(vec, k, rng)
    idx = np.zeros(len(vec), dtype=np.int64)
    for _ in range(max(iters, 1)):
        idx = _nearest_center(vec, centers)
        new_centers = centers.copy()
        counts = np.bincount(idx, minlength=k)
        for d in range(vec.shape[1]):
            sums = np.bincount(idx, weights=vec[:, d], minlength=k)
            nz = counts > 0
            new_centers[nz, d] = sums[nz] / counts[nz]
        move = float(np.abs(new_centers - centers).max())
        centers = new_centers
        if move < 1e-6:
            break
    idx = _nearest_center(vec, centers)
    return centers, idx.astype(np.uint32)


def _nearest_center(vec, centers, chunk: int = 4096):
    c2 = (centers ** 2).sum(axis=1)
    out = np.empty(len(vec), dtype=np.int64)
    for i in range(0, len(vec), chunk):
        sl = vec[i:i + chunk]
        d = c2[None, :] - 2.0 * (sl @ centers.T)
        out[i:i + chunk] = np.argmin(d, axis=1)
    return out


def _kmeans_pp(vec, k, rng):
    n = len(vec)
    centers = np.empty((k, vec.shape[1]))
    centers[0] = vec[rng.integers(n)]
    d2 = ((vec - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        centers[j] = vec[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((vec - centers[j]) ** 2).sum(axis=1))
    return centers


def quantize(cloud: GaussianCloud, profile: str = "low", k: int = 16384,
             kmeans_iters: int = 10, seed: int = 0) -> CompressedCloud:
    """Quantize a cloud; `clustered` additionally replaces SH rest vectors
    with indices into a shared codebook (capped at a quarter of the splat
    count so clustering always shrinks the file)."""
    if profile not in ("low", "clustered"):
        raise ValueError(f"unknown profile {profile!r}")
    order = np.argsort(cloud.layers, kind="stable")
    cl = cloud.select(order)
    n = len(cl)
    r = 3 * _rest_count(cl.sh_degree)

    dc = cl.sh[:, 0, :]
    dc_lo, dc_hi = (dc.min(axis=0), dc.max(axis=0)) if n else \
        (np.zeros(3), np.zeros(3))
    rest = cl.sh[:, 1:, :].reshape(n, r)

    if profile == "clustered" and n:
        k_eff = max(1, min(k, n // 4))
        codebook, indices = kmeans_sh(cl, k_eff, kmeans_iters, seed)
        src = codebook
    else:
        indices = None
        src = rest
    if len(src):
        rest_lo, rest_hi = src.min(axis=0), src.max(axis=0)
    else:
        rest_lo = rest_hi = np.zeros(r)
    return CompressedCloud(
        profile=profile, layer_count=cloud.layer_count,
        sh_degree=cl.sh_degree, layers=cl.layers.copy(),
        positions=cl.positions.astype(np.float16),
        rotations=cl.rotations.astype(np.float16),
        log_scales=cl.log_scales.astype(np.float16),
        opacities=cl.opacity_logits.astype(np.float16),
        dc_q=_quant_u16(dc, dc_lo, dc_hi),
        dc_range=np.stack([dc_lo, dc_hi]).astype(np.float32),
        rest_q=_quant_u16(src, rest_lo, rest_hi),
        rest_range=np.stack([rest_lo, rest_hi]).astype(np.float32),
        indices=indices)


def dequantize(comp: CompressedCloud) -> GaussianCloud:
    n = len(comp)
    k = (comp.sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    lo, hi = comp.dc_range.astype(np.float64)
    sh[:, 0, :] = _dequant_u16(comp.dc_q, lo, hi)
    rlo, rhi = comp.rest_range.astype(np.float64)
    rest = _dequant_u16(comp.rest_q, rlo, rhi)
    if comp.profile == "clustered":
        rest = rest[comp.indices]
    sh[:, 1:, :] = rest.reshape(n, k - 1, 3)
    return GaussianCloud(comp.positions.astype(np.float64),
                         comp.rotations.astype(np.float64),
                         comp.log_scales.astype(np.float64),
                         comp.opacities.astype(np.float64), sh,
                         comp.layers.copy(), np.zeros(n, bool),
                         comp.layer_count, comp.sh_degree)


def export_viewer(comp: CompressedCloud) -> bytes:
    """Compact versioned viewer binary (.lspl); see docs/formats.md."""
    buf = io.BytesIO()
    n = len(comp)
    counts = comp.layer_counts()
    header = np.zeros(1, dtype=[("magic", "S4"), ("version", "<u4"),
                                ("profile", "<u4"), ("count", "<u8"),
                                ("layer_count", "<u4"), ("sh_degree", "<u4"),
                                ("codebook", "<u4")])
    header["magic"] = LSPL_MAGIC
    header["version"] = LSPL_VERSION
    header["profile"] = 1 if comp.profile == "clustered" else 0
    header["count"] = n
    header["layer_count"] = comp.layer_count
    header["sh_degree"] = comp.sh_degree
    header["codebook"] = comp.codebook_size
    buf.write(header.tobytes())
    buf.write(counts.astype("<u4").tobytes())
    buf.write(comp.dc_range.astype("<f4").tobytes())
    buf.write(comp.rest_range.astype("<f4").tobytes())
    start = 0
    for c in counts:
        sl = slice(start, start + int(c))
        buf.write(comp.positions[sl].astype("<f2").tobytes())
        buf.write(comp.rotations[sl].astype("<f2").tobytes())
        buf.write(comp.log_scales[sl].astype("<f2").tobytes())
        buf.write(comp.opacities[sl].astype("<f2").tobytes())
        buf.write(comp.dc_q[sl].astype("<u2").tobytes())
        if comp.profile == "clustered":
            buf.write(comp.indices[sl].astype("<u4").tobytes())
        else:
            buf.write(comp.rest_q[sl].astype("<u2").tobytes())
        start += int(c)
    if comp.profile == "clustered":
        buf.write(comp.rest_q.astype("<u2").tobytes())
    return buf.getvalue()


def parse_viewer(data: bytes) -> CompressedCloud:
    """Inverse of export_viewer; validates magic, version, and length."""
    hdr_t = np.dtype([("magic", "S4"), ("version", "<u4"), ("profile", "<u4"),
                      ("count", "<u8"), ("layer_count", "<u4"),
                      ("sh_degree", "<u4"), ("codebook", "<u4")])
    if len(data) < hdr_t.itemsize or data[:4] != LSPL_MAGIC:
        raise ValueError("not an LSPL file (bad magic)")
    hdr = np.frombuffer(data[:hdr_t.itemsize], dtype=hdr_t)[0]
    if int(hdr["version"]) != LSPL_VERSION:
        raise ValueError(f"unsupported LSPL version {int(hdr['version'])}")
    profile = "clustered" if int(hdr["profile"]) else "low"
    n = int(hdr["count"])
    layer_count = int(hdr["layer_count"])
    degree = int(hdr["sh_degree"])
    cb = int(hdr["codebook"])
    r = 3 * _rest_count(degree)

    off = hdr_t.itemsize

    def take(dtype, shape):
        nonlocal off
        arr = np.zeros(shape, dtype=dtype) if 0 in np.atleast_1d(shape) else None
        count = int(np.prod(shape))
        size = np.dtype(dtype).itemsize * count
        if off + size > len(data):
            raise ValueError("truncated LSPL payload")
        arr = np.frombuffer(data[off:off + size], dtype=dtype).reshape(shape)
        off += size
        return arr

    counts = take("<u4", (layer_count,)).astype(np.int64)
    if counts.sum() != n:
        raise ValueError("layer counts do not sum to the splat count")
    dc_range = take("<f4", (2, 3))
    rest_range = take("<f4", (2, r))
    pos, rot, sca, opa, dcq = [], [], [], [], []
    idx_or_rest = []
    for c in counts:
        c = int(c)
        pos.append(take("<f2", (c, 3)))
        rot.append(take("<f2", (c, 4)))
        sca.append(take("<f2", (c, 3)))
        opa.append(take("<f2", (c,)))
        dcq.append(take("<u2", (c, 3)))
        if profile == "clustered":
            idx_or_rest.append(take("<u4", (c,)))
        else:
            idx_or_rest.append(take("<u2", (c, r)))
    if profile == "clustered":
        rest_q = take("<u2", (cb, r))
        indices = np.concatenate(idx_or_rest) if n else np.zeros(0, np.uint32)
        if n and indices.max(initial=0) >= max(cb, 1):
            raise ValueError("codebook index out of range")
    else:
        rest_q = np.concatenate(idx_or_rest) if n else np.zeros((0, r), np.uint16)
        indices = None
    layers = np.repeat(np.arange(layer_count, dtype=np.int32), counts)
    cat = (lambda xs, sh: np.concatenate(xs) if n else np.zeros(sh))
    return CompressedCloud(
        profile=profile, layer_count=layer_count, sh_degree=degree,
        layers=layers, positions=cat(pos, (0, 3)), rotations=cat(rot, (0, 4)),
        log_scales=cat(sca, (0, 3)), opacities=cat(opa, (0,)),
        dc_q=cat(dcq, (0, 3)), dc_range=dc_range, rest_q=rest_q,
        rest_range=rest_range, indices=indices)
