"""Training datasets: rendered RGBA views, camera poses, initial point clouds.

On-disk layout:
    manifest.txt                 cameras and split assignment, plain text
    layer_<k>/train/<i>.png      8-bit RGBA, straight alpha, i = camera index
    layer_<k>/test/<i>.png
    layer_<k>/init_points.ply    per-layer initial cloud (ASCII PLY xyz+rgb)
    init_points.ply              copy of layer 0's cloud for layer-unaware use
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .cameras import Camera
from .volume import TransferFunction, VoxelVolume, init_point_cloud, raymarch


@dataclass
class Dataset:
    """Views across all layers plus per-layer initial point clouds."""

    cameras: list            # per view
    images: list             # per view, (H, W, 4) float in [0, 1]
    layers: np.ndarray       # per view layer index
    init_points: dict = field(default_factory=dict)  # layer -> (pos, rgb)
    layer_count: int = 1
    cam_indices: np.ndarray | None = None  # original camera index per view

    def __post_init__(self):
        self.layers = np.asarray(self.layers, dtype=np.int32)
        if len(self.images) != len(self.cameras) or \
                len(self.layers) != len(self.cameras):
            raise ValueError("views, images, and layer tags must align")
        for cam, img in zip(self.cameras, self.images):
            if img.shape[:2] != (cam.height, cam.width) or img.shape[2] != 4:
                raise ValueError("image dimensions must match their camera")
        if len(self.layers) and self.layers.max() >= self.layer_count:
            raise ValueError("layer index out of range")

    def __len__(self):
        return len(self.cameras)

    def iter_views(self):
        yield from zip(self.cameras, self.images, self.layers)

    def views_for_layer(self, layer: int):
        return [(c, i) for c, i, l in self.iter_views() if l == layer]


def render_dataset(volume: VoxelVolume, tfs: list[TransferFunction], cams,
                   step: float, holdout_every: int = 8, ray_budget: int = 5000,
                   alpha_threshold: float | None = None, seed: int = 0):
    """Render every camera under every layer's transfer function.

    Every `holdout_every`-th view (by camera index) goes to the test split.
    Returns (train Dataset, test Dataset) sharing per-layer init point clouds.
    When `alpha_threshold` is None it defaults to 0.2, lowered per layer for
    transfer functions whose alphas never get near 0.2 (semi-transparent
    materials would otherwise yield no surface points at all).
    """
    if holdout_every < 2:
        raise ValueError("holdout_every < 2 leaves an empty train split")
    if not cams:
        raise ValueError("need at least one camera")
    init_points = {}
    for k, tf in enumerate(tfs):
        thr = alpha_threshold
        if thr is None:
            thr = min(0.2, max(0.5 * float(tf.rgba[:, 3].max()), 1e-9))
        init_points[k] = init_point_cloud(volume, tf, ray_budget, thr,
                                          seed=seed + k)
    splits = {True: ([], [], [], []), False: ([], [], [], [])}
    for k, tf in enumerate(tfs):
        for i, cam in enumerate(cams):
            img = raymarch(volume, tf, cam, step)
            is_test = i % holdout_every == 0
            c, im, la, ci = splits[is_test]
            c.append(cam)
            im.append(img)
            la.append(k)
            ci.append(i)
    out = []
    for is_test in (False, True):
        c, im, la, ci = splits[is_test]
        out.append(Dataset(c, im, np.array(la, np.int32), dict(init_points),
                           len(tfs), np.array(ci, np.int64)))
    return out[0], out[1]


def save_image(path, img: np.ndarray) -> None:
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGBA").save(path)


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGBA"), dtype=np.float64) / 255.0


def write_points_ply(path, positions: np.ndarray, colors: np.ndarray) -> None:
    """ASCII PLY: x, y, z float plus red, green, blue uchar."""
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(positions)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        f.write("end_header\n")
        rgb8 = np.clip(np.round(colors * 255.0), 0, 255).astype(np.uint8)
        for p, c in zip(positions, rgb8):
            f.write(f"{p[0]:.8g} {p[1]:.8g} {p[2]:.8g} {c[0]} {c[1]} {c[2]}\n")


def read_points_ply(path):
    with open(path) as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError(f"{path} is not a PLY file")
        n = 0
        while True:
            line = f.readline()
            if not line:
                raise ValueError("unterminated PLY header")
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            if line.strip() == "end_header":
                break
        pos = np.zeros((n, 3))
        rgb = np.zeros((n, 3))
        for i in range(n):
            parts = f.readline().split()
            pos[i] = [float(v) for v in parts[:3]]
            rgb[i] = [int(v) / 255.0 for v in parts[3:6]]
    return pos, rgb


def save_dataset(out_dir, train: Dataset, test: Dataset,
                 holdout_every: int = 8) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cam_of = {}
    split_of = {}
    for ds, split in ((train, "train"), (test, "test")):
        for (cam, img, layer), ci in zip(ds.iter_views(), ds.cam_indices):
            d = out / f"layer_{layer}" / split
            d.mkdir(parents=True, exist_ok=True)
            save_image(d / f"{ci:05d}.png", img)
            cam_of[int(ci)] = cam
            split_of[int(ci)] = split
    for layer, (pos, rgb) in train.init_points.items():
        write_points_ply(out / f"layer_{layer}" / "init_points.ply", pos, rgb)
    if 0 in train.init_points:
        pos, rgb = train.init_points[0]
        write_points_ply(out / "init_points.ply", pos, rgb)

    with open(out / "manifest.txt", "w") as f:
        f.write("layersplat-dataset 1\n")
        f.write(f"layers {train.layer_count}\n")
        f.write(f"test_every {holdout_every}\n")
        f.write("# cam <index> <split> px py pz qw qx qy qz"
                " focal width height near\n")
        for ci in sorted(cam_of):
            cam = cam_of[ci]
            p = " ".join(f"{v:.12g}" for v in cam.position)
            q = " ".join(f"{v:.12g}" for v in cam.rotation)
            f.write(f"cam {ci} {split_of[ci]} {p} {q} {cam.focal:.12g} "
                    f"{cam.width} {cam.height} {cam.near:.12g}\n")


def load_dataset(in_dir):
    """Load (train, test) datasets written by save_dataset."""
    root = Path(in_dir)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.txt in {in_dir}")
    layer_count = None
    cams = {}
    split_of = {}
    with open(manifest) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "layers":
                layer_count = int(parts[1])
            elif parts[0] == "cam":
                ci = int(parts[1])
                split_of[ci] = parts[2]
                vals = [float(v) for v in parts[3:]]
                cams[ci] = Camera(np.array(vals[0:3]), np.array(vals[3:7]),
                                  vals[7], int(vals[8]), int(vals[9]), vals[10])
    if layer_count is None:
        raise ValueError("manifest lacks a layers line")

    init_points = {}
    for k in range(layer_count):
        ply = root / f"layer_{k}" / "init_points.ply"
        if ply.exists():
            init_points[k] = read_points_ply(ply)
    if not init_points and (root / "init_points.ply").exists():
        init_points[0] = read_points_ply(root / "init_points.ply")

    out = []
    for split in ("train", "test"):
        c, im, la, ci_list = [], [], [], []
        for k in range(layer_count):
            d = root / f"layer_{k}" / split
            if not d.is_dir():
                continue
            for png in sorted(d.glob("*.png")):
                ci = int(png.stem)
                c.append(cams[ci])
                im.append(load_image(png))
                la.append(k)
                ci_list.append(ci)
        out.append(Dataset(c, im, np.array(la, np.int32), init_points,
                           layer_count, np.array(ci_list, np.int64)))
    return out[0], out[1]
