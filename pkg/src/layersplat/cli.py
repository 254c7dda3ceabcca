"""Command-line pipeline: gen, train, compress, render, eval, export-viewer.

Every run writes its fully resolved configuration next to its outputs so any
result can be reproduced from one line. Exit codes: 0 success, 2 usage
errors, 1 runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import backend
from .cameras import Camera, generate_cameras, look_at_quat
from .dataset import load_dataset, render_dataset, save_dataset, save_image
from .formats import (dequantize, export_viewer, load_ply, parse_viewer,
                      quantize, save_ply, write_ply)
from .metrics import MetricReport, psnr
from .render import StereoRequest, ViewRequest, render_stereo, render_view, \
    write_timing_csv
from .scenes import SCENE_IDS, build_scene
from .splats import CutPlane, GaussianCloud
from .training import TrainConfig, composite_over, train_layered


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _write_resolved_config(out_dir: Path, command: str, params: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    clean = {}
    for k, v in params.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        elif isinstance(v, Path):
            v = str(v)
        elif isinstance(v, tuple):
            v = list(v)
        elif not isinstance(v, (str, int, float, bool, list, dict,
                                type(None))):
            continue
        clean[k] = v
    with open(out_dir / "resolved_config.json", "w") as f:
        json.dump({"command": command, "backend": backend.BACKEND,
                   "params": clean}, f, indent=2, sort_keys=True)
        f.write("\n")


def _parse_layers(text: str | None, layer_count: int) -> np.ndarray:
    mask = np.zeros(layer_count, dtype=bool)
    if text is None or text == "all":
        mask[:] = True
        return mask
    for part in text.split(","):
        k = int(part)
        if not 0 <= k < layer_count:
            raise ValueError(f"layer {k} out of range (have {layer_count})")
        mask[k] = True
    return mask


def _parse_cut(args, layer_count: int) -> CutPlane | None:
    if args.cut is None:
        return None
    vals = [float(v) for v in args.cut.split(",")]
    if len(vals) != 4:
        raise ValueError("--cut expects nx,ny,nz,offset")
    normal = np.array(vals[:3])
    n = np.linalg.norm(normal)
    if n == 0:
        raise ValueError("cut normal must be nonzero")
    mask = None
    if args.cut_layers is not None:
        mask = _parse_layers(args.cut_layers, layer_count)
    return CutPlane(normal / n, vals[3], mask)


def _load_cloud(path) -> GaussianCloud:
    path = Path(path)
    if path.suffix == ".lspl":
        return dequantize(parse_viewer(path.read_bytes()))
    return load_ply(path)


def cmd_gen(args) -> int:
    vol, tfs = build_scene(args.scene, args.resolution)
    cams = generate_cameras(args.views, vol.center(), args.radius,
                            (args.band_min, args.band_max), seed=args.seed,
                            width=args.size, height=args.size,
                            fov_deg=args.fov)
    step = vol.reference_step * args.step_scale
    train, test = render_dataset(vol, tfs, cams, step,
                                 holdout_every=args.holdout,
                                 ray_budget=args.rays, seed=args.seed)
    out = Path(args.out)
    save_dataset(out, train, test, args.holdout)
    _write_resolved_config(out, "gen", vars(args))
    for k in range(train.layer_count):
        n_tr = int((train.layers == k).sum())
        n_te = int((test.layers == k).sum())
        print(f"layer {k}: {n_tr} train / {n_te} test views, "
              f"{len(train.init_points[k][0])} init points")
    return 0


def _config_from_args(args) -> TrainConfig:
    base = TrainConfig.hq() if args.preset == "hq" else TrainConfig()
    values = dataclasses.asdict(base)
    if args.config:
        with open(args.config) as f:
            loaded = json.load(f)
        unknown = set(loaded) - set(values)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for key in ("iterations", "seed", "lambda_alpha", "lambda_dssim",
                "densify_grad_threshold", "percent_dense"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if args.background is not None:
        if args.background == "random":
            values["background_mode"] = "random"
        else:
            values["background_mode"] = "fixed"
            values["background_rgb"] = tuple(float(x) for x
                                             in args.background.split(","))
    if args.no_inactive_prune:
        values["inactive_prune_enabled"] = False
    values["activity_weights"] = tuple(values["activity_weights"])
    values["background_rgb"] = tuple(values["background_rgb"])
    return TrainConfig(**values)


def cmd_train(args) -> int:
    train, _test = load_dataset(args.dataset)
    cfg = _config_from_args(args)
    subset = None
    if args.layers is not None:
        subset = [int(v) for v in args.layers.split(",")]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cloud, report = train_layered(train, cfg, layer_subset=subset,
                                  log_dir=out.parent)
    save_ply(cloud, out)
    _write_resolved_config(out.parent, "train",
                           {**vars(args), **dataclasses.asdict(cfg)})
    total = len(write_ply(cloud))
    print(f"wrote {out} ({total} bytes, {len(cloud)} gaussians,"
          f" {cloud.layer_count} layers)")
    for k, cum in report:
        n_k = int((cloud.layers == k).sum())
        print(f"layer {k}: {n_k} gaussians (cumulative {cum} during training)")
    return 0


def _fidelity_views(cloud: GaussianCloud, n: int = 8):
    center = cloud.positions.mean(axis=0) if len(cloud) else np.zeros(3)
    spread = float(np.linalg.norm(cloud.positions - center, axis=1).max()) \
        if len(cloud) else 1.0
    return generate_cameras(n, center, 2.5 * max(spread, 1e-3), (0.2, 0.9),
                            seed=17, width=64, height=64)


def cmd_compress(args) -> int:
    cloud = load_ply(args.input)
    raw = len(write_ply(cloud))
    comp_low = quantize(cloud, "low")
    comp_cl = quantize(cloud, "clustered", k=args.codebook,
                       kmeans_iters=args.kmeans_iters, seed=args.seed)
    low_bytes = export_viewer(comp_low)
    cl_bytes = export_viewer(comp_cl)
    chosen = {"low": (comp_low, low_bytes),
              "clustered": (comp_cl, cl_bytes)}[args.profile]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(chosen[1])
    _write_resolved_config(out.parent, "compress", vars(args))

    print(f"uncompressed PLY: {raw} bytes")
    print(f"low profile:      {len(low_bytes)} bytes")
    print(f"clustered:        {len(cl_bytes)} bytes "
          f"(codebook {comp_cl.codebook_size})")
    counts = comp_low.layer_counts()
    for k, n_k in enumerate(counts):
        print(f"layer {k}: {int(n_k)} gaussians")
    if len(cloud):
        cams = _fidelity_views(cloud)
        vals_low, vals_cl = [], []
        for cam in cams:
            ref, _ = render_view(cloud, ViewRequest(cam))
            lo, _ = render_view(comp_low, ViewRequest(cam))
            cl, _ = render_view(comp_cl, ViewRequest(cam))
            vals_low.append(psnr(lo.rgb, ref.rgb))
            vals_cl.append(psnr(cl.rgb, ref.rgb))
        print(f"round-trip render PSNR: low {np.mean(vals_low):.2f} dB, "
              f"clustered {np.mean(vals_cl):.2f} dB over {len(cams)} views")
    return 0


def _camera_from_args(args, cloud: GaussianCloud) -> Camera:
    target = np.array([float(v) for v in args.target.split(",")]) \
        if args.target else (cloud.positions.mean(axis=0) if len(cloud)
                             else np.zeros(3))
    az, el = np.deg2rad(args.azimuth), np.deg2rad(args.elevation)
    pos = target + args.distance * np.array([np.cos(el) * np.cos(az),
                                             np.cos(el) * np.sin(az),
                                             np.sin(el)])
    focal = 0.5 * args.size / np.tan(np.deg2rad(args.fov) / 2)
    return Camera(pos, look_at_quat(pos, target), focal, args.size, args.size)


def _write_render_png(path, out, background_given: bool) -> None:
    if background_given:
        rgba = np.concatenate([out.rgb, np.ones_like(out.alpha)[..., None]],
                              axis=-1)
    else:
        a = np.maximum(out.alpha, 1e-12)[..., None]
        rgb = np.clip(out.rgb / a, 0.0, 1.0)
        rgba = np.concatenate([rgb, out.alpha[..., None]], axis=-1)
    save_image(path, np.clip(rgba, 0.0, 1.0))


def cmd_render(args) -> int:
    cloud = _load_cloud(args.input)
    mask = _parse_layers(args.layers, cloud.layer_count)
    cut = _parse_cut(args, cloud.layer_count)
    cam = _camera_from_args(args, cloud)
    bg = np.array([float(v) for v in args.bg.split(",")]) if args.bg \
        else np.zeros(3)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    records = []
    if args.stereo:
        req = StereoRequest(cam, args.ipd, not args.per_eye_sort, mask, cut,
                            tuple(bg))
        left, right, records = render_stereo(cloud, req)
        _write_render_png(out.with_stem(out.stem + "_left"), left,
                          args.bg is not None)
        _write_render_png(out.with_stem(out.stem + "_right"), right,
                          args.bg is not None)
        print(f"wrote stereo pair next to {out}")
    else:
        view, timing = render_view(cloud, ViewRequest(cam, mask, cut,
                                                      tuple(bg)))
        records = [timing]
        _write_render_png(out, view, args.bg is not None)
        print(f"wrote {out}")
    for r in records:
        print(f"{r.view_id}: {r.splat_count} splats, sort {r.sort_ms:.2f} ms,"
              f" raster {r.raster_ms:.2f} ms")
    if args.timing_csv:
        write_timing_csv(args.timing_csv, records)
    _write_resolved_config(out.parent, "render", vars(args))
    return 0


def cmd_eval(args) -> int:
    cloud = _load_cloud(args.input)
    _train, test = load_dataset(args.dataset)
    layers = [int(v) for v in args.layers.split(",")] if args.layers \
        else list(range(min(cloud.layer_count, test.layer_count)))
    ids, rendered, refs = [], [], []
    black = np.zeros(3)
    for k in layers:
        # a layer is displayed with all lower layers, as trained
        mask = np.zeros(cloud.layer_count, dtype=bool)
        mask[:k + 1] = True
        for (cam, gt, lay), ci in zip(test.iter_views(), test.cam_indices):
            if lay != k:
                continue
            view, _ = render_view(cloud, ViewRequest(cam, mask))
            ids.append(f"layer{k}/{ci:05d}")
            rendered.append(view.rgb)
            refs.append(composite_over(gt, black))
    report = MetricReport.from_pairs(ids, rendered, refs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out)
    _write_resolved_config(out.parent, "eval", vars(args))
    print(f"wrote {out}: PSNR {report.psnr_mean:.2f} +- {report.psnr_std:.2f},"
          f" SSIM {report.ssim_mean:.4f} +- {report.ssim_std:.4f}"
          f" over {len(ids)} images")
    return 0


def cmd_export_viewer(args) -> int:
    cloud = load_ply(args.input)
    comp = quantize(cloud, args.profile, k=args.codebook,
                    kmeans_iters=args.kmeans_iters, seed=args.seed)
    blob = export_viewer(comp)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(blob)
    _write_resolved_config(out.parent, "export-viewer", vars(args))
    print(f"wrote {out} ({len(blob)} bytes, {len(comp)} splats,"
          f" {comp.layer_count} layers)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="layersplat",
        description="Layered Gaussian splatting for volume visualization")
    ap.add_argument("--threads", type=int,
                    default=int(os.environ.get("LAYERSPLAT_THREADS", "0")),
                    help="kernel thread cap (0 = library default)")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a layered training dataset")
    g.add_argument("--scene", choices=SCENE_IDS, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--views", type=_positive_int, default=128)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--resolution", type=int, default=128,
                   help="voxel grid resolution")
    g.add_argument("--holdout", type=int, default=8,
                   help="every Nth view goes to the test split")
    g.add_argument("--rays", type=int, default=5000,
                   help="ray budget for initial point clouds")
    g.add_argument("--radius", type=float, default=2.4)
    g.add_argument("--band-min", type=float, default=0.15)
    g.add_argument("--band-max", type=float, default=1.1)
    g.add_argument("--fov", type=float, default=50.0)
    g.add_argument("--step-scale", type=float, default=0.5,
                   help="march step as a fraction of the voxel size")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a layered gaussian cloud")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True, help="output layered PLY")
    t.add_argument("--preset", choices=("default", "hq"), default="default")
    t.add_argument("--config", help="JSON file with TrainConfig fields")
    t.add_argument("--layers", help="comma list of layers to train"
                                    " (default: all)")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lambda-alpha", dest="lambda_alpha", type=float)
    t.add_argument("--lambda-dssim", dest="lambda_dssim", type=float)
    t.add_argument("--densify-grad-threshold", dest="densify_grad_threshold",
                   type=float)
    t.add_argument("--percent-dense", dest="percent_dense", type=float)
    t.add_argument("--background",
                   help="'random' or fixed 'r,g,b' training background")
    t.add_argument("--no-inactive-prune", action="store_true")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compress", help="quantize and report sizes")
    c.add_argument("--input", required=True, help="layered PLY")
    c.add_argument("--out", required=True, help="output .lspl")
    c.add_argument("--profile", choices=("low", "clustered"),
                   default="clustered")
    c.add_argument("--codebook", type=int, default=16384)
    c.add_argument("--kmeans-iters", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_compress)

    r = sub.add_parser("render", help="render a view of a trained cloud")
    r.add_argument("--input", required=True, help=".ply or .lspl")
    r.add_argument("--out", required=True, help="output PNG")
    r.add_argument("--layers", help="comma list or 'all'")
    r.add_argument("--cut", help="cut plane nx,ny,nz,offset")
    r.add_argument("--cut-layers", help="layers the cut applies to")
    r.add_argument("--azimuth", type=float, default=30.0)
    r.add_argument("--elevation", type=float, default=25.0)
    r.add_argument("--distance", type=float, default=2.4)
    r.add_argument("--target", help="look-at point x,y,z")
    r.add_argument("--size", type=int, default=256)
    r.add_argument("--fov", type=float, default=50.0)
    r.add_argument("--bg", help="background r,g,b (default: transparent)")
    r.add_argument("--stereo", action="store_true")
    r.add_argument("--ipd", type=float, default=0.06)
    r.add_argument("--per-eye-sort", action="store_true",
                   help="sort each stereo eye separately")
    r.add_argument("--timing-csv")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="evaluate against a dataset's test split")
    e.add_argument("--input", required=True, help=".ply or .lspl")
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True, help="metrics CSV")
    e.add_argument("--layers", help="comma list (default: all)")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-viewer", help="write a .lspl viewer asset")
    x.add_argument("--input", required=True, help="layered PLY")
    x.add_argument("--out", required=True, help="output .lspl")
    x.add_argument("--profile", choices=("low", "clustered"),
                   default="clustered")
    x.add_argument("--codebook", type=int, default=16384)
    x.add_argument("--kmeans-iters", type=int, default=10)
    x.add_argument("--seed", type=int, default=0)
    x.set_defaults(func=cmd_export_viewer)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads:
        backend.set_num_threads(args.threads)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
