"""Benchmark the numba kernels against the pure-numpy fallback paths.

Runs both backends on identical inputs (raymarch, rasterize forward and
backward) and prints per-kernel timings plus speedups. The active production
backend is chosen by LAYERSPLAT_BACKEND; this script always times both.

Usage: python3 benchmarks/bench_kernels.py [--size 64] [--splats 10000]
"""

import argparse
import time

import numpy as np

from layersplat.backend import NUMBA_ENABLED
from layersplat.cameras import generate_cameras
from layersplat.scenes import build_scene
from layersplat.splats import GaussianCloud, _preprocess, inverse_sigmoid


def bench(fn, n_warmup=2, n_iter=8):
    for _ in range(n_warmup):
        fn()
    t0 = time.perf_counter()
    for _ in range(n_iter):
        fn()
    return (time.perf_counter() - t0) / n_iter * 1000.0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=64, help="image size")
    ap.add_argument("--splats", type=int, default=10_000)
    ap.add_argument("--resolution", type=int, default=96,
                    help="voxel grid resolution for the raymarch case")
    args = ap.parse_args()

    if not NUMBA_ENABLED:
        print("numba backend unavailable; benchmarking numpy path only")

    from layersplat.kernels import march_np, raster_np
    paths = {"numpy": (march_np, raster_np)}
    if NUMBA_ENABLED:
        from layersplat.kernels import march_nb, raster_nb
        paths["numba"] = (march_nb, raster_nb)

    # raymarch case
    vol, tfs = build_scene("two_layer", args.resolution)
    cam = generate_cameras(1, vol.center(), 2.4, (0.3, 0.7),
                           width=args.size, height=args.size)[0]
    lo, hi = vol.bounds()
    march_args = (vol.data, vol.origin, vol.spacing, tfs[1].densities,
                  tfs[1].rgba, cam.position, cam.ray_directions(),
                  vol.reference_step * 0.5, vol.reference_step, lo, hi)

    # rasterize case
    rng = np.random.default_rng(5)
    n = args.splats
    cloud = GaussianCloud(
        positions=rng.uniform(-0.6, 0.6, (n, 3)),
        rotations=rng.normal(0, 1, (n, 4)),
        log_scales=np.log(rng.uniform(0.005, 0.04, (n, 3))),
        opacity_logits=inverse_sigmoid(rng.uniform(0.2, 0.9, n)),
        sh=rng.normal(0, 0.3, (n, 16, 3)),
        layers=np.zeros(n, np.int32), frozen=np.zeros(n, bool),
        layer_count=1, sh_degree=3)
    bg = np.zeros(3)
    ctx = _preprocess(cloud, cam, bg, np.ones(1, bool), None)
    fwd_args = (ctx.mean2d, ctx.conic, ctx.opac, ctx.rgb, ctx.pair_splat,
                ctx.tile_start, cam.width, cam.height, bg)
    grad_rgb = rng.normal(0, 1, (args.size, args.size, 3))
    grad_alpha = rng.normal(0, 1, (args.size, args.size))
    bwd_args = fwd_args + (grad_rgb, grad_alpha)

    print(f"image {args.size}x{args.size}, {n} splats, "
          f"volume {args.resolution}^3")
    print(f"{'kernel':<22}" + "".join(f"{k:>12}" for k in paths)
          + ("     speedup" if len(paths) == 2 else ""))
    rows = [("raymarch", lambda m, r: m.raymarch_image(*march_args)),
            ("rasterize forward", lambda m, r: r.forward(*fwd_args)),
            ("rasterize backward", lambda m, r: r.backward(*bwd_args))]
    for name, call in rows:
        times = {}
        for key, (march_mod, raster_mod) in paths.items():
            times[key] = bench(lambda: call(march_mod, raster_mod))
        line = f"{name:<22}" + "".join(f"{times[k]:>10.2f}ms" for k in paths)
        if len(paths) == 2:
            line += f"{times['numpy'] / times['numba']:>10.1f}x"
        print(line)


if __name__ == "__main__":
    main()
