"""Acceptance criteria, one test per criterion, each printing PASS/FAIL.

Heavy artifacts (datasets, trained clouds) are module-scoped and shared.
Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; the whole module takes roughly 20-30 minutes on a laptop CPU.
"""

import csv
import sys
import time

import numpy as np
import pytest

import conftest
from conftest import make_camera, random_cloud, reference_render
from layersplat.backend import NUMBA_ENABLED
from layersplat.cameras import generate_cameras
from layersplat.dataset import render_dataset
from layersplat.formats import (dequantize, export_viewer, parse_viewer,
                                quantize, read_ply, write_ply)
from layersplat.metrics import psnr, ssim
from layersplat.render import (StereoRequest, ViewRequest, render_stereo,
                               render_view)
from layersplat.scenes import build_scene
from layersplat.splats import rasterize, rasterize_backward
from layersplat.training import (TrainConfig, composite_over, train_layer,
                                 train_layered)

BLACK = np.zeros(3)


def report(name: str, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {'PASS' if ok else 'FAIL'} | {name} | {detail}"
    conftest.ACCEPTANCE_LINES.append(line)  # echoed in the terminal summary
    print(line, file=sys.__stdout__, flush=True)  # live line under -s
    assert ok, f"{name}: {detail}"


def eval_layer(cloud, dataset, layer, background=BLACK):
    """Mean PSNR/SSIM of a layer's test views, lower layers active."""
    mask = np.zeros(cloud.layer_count, dtype=bool)
    mask[:layer + 1] = True
    ps, ss = [], []
    for cam, gt, lay in dataset.iter_views():
        if lay != layer:
            continue
        out = rasterize(cloud, cam, background, active_layers=mask)
        ref = composite_over(gt, background)
        ps.append(psnr(out.rgb, ref))
        ss.append(ssim(out.rgb, ref))
    return float(np.mean(ps)), float(np.mean(ss))


@pytest.fixture(scope="module")
def two_layer_scene():
    return build_scene("two_layer", 128)


@pytest.fixture(scope="module")
def ds_two(two_layer_scene):
    vol, tfs = two_layer_scene
    cams = generate_cameras(64, vol.center(), 2.4, (0.15, 1.1), seed=11,
                            width=64, height=64)
    return render_dataset(vol, tfs, cams, vol.reference_step * 0.5,
                          holdout_every=8, ray_budget=4000, seed=12)


@pytest.fixture(scope="module")
def cloud0_result(ds_two, tmp_path_factory):
    train, _ = ds_two
    cfg = TrainConfig(seed=0)  # spec defaults: 3000 iterations
    log = tmp_path_factory.mktemp("acc") / "layer0.csv"
    t0 = time.time()
    cloud = train_layer(train, None, 0, cfg, log_path=log)
    return cloud, time.time() - t0, log


@pytest.fixture(scope="module")
def layered_runs(ds_two, cloud0_result, tmp_path_factory):
    train, _ = ds_two
    cloud0 = cloud0_result[0]
    frozen = cloud0.copy()
    frozen.frozen[:] = True
    logdir = tmp_path_factory.mktemp("acc_l1")
    runs = {}
    for name, prune in (("on", True), ("off", False)):
        cfg = TrainConfig(iterations=2000, seed=0,
                          inactive_prune_enabled=prune)
        runs[name] = train_layer(train, frozen.copy(), 1, cfg,
                                 log_path=logdir / f"layer1_{name}.csv")
    return runs, logdir


@pytest.fixture(scope="module")
def ds_transparency():
    vol, tfs = build_scene("transparency", 96)
    cams = generate_cameras(40, vol.center(), 2.4, (0.15, 1.1), seed=21,
                            width=48, height=48)
    return render_dataset(vol, tfs, cams, vol.reference_step * 0.5,
                          holdout_every=8, ray_budget=2500, seed=22)


@pytest.fixture(scope="module")
def ds_three():
    vol, tfs = build_scene("three_layer", 96)
    cams = generate_cameras(40, vol.center(), 2.4, (0.15, 1.1), seed=31,
                            width=48, height=48)
    return render_dataset(vol, tfs, cams, vol.reference_step * 0.5,
                          holdout_every=8, ray_budget=2500, seed=32)


@pytest.fixture(scope="module")
def three_layer_clouds(ds_three):
    train, _ = ds_three
    cfg = TrainConfig(iterations=900, seed=0)
    layered, _ = train_layered(train, cfg)
    standalone = [train_layered(train, cfg, layer_subset=[k])[0]
                  for k in range(3)]
    return layered, standalone


def test_criterion_gradient_correctness():
    """Backward matches central finite differences on every parameter."""
    cloud = random_cloud(np.random.default_rng(7), 10, spread=0.4,
                         scale_range=(0.08, 0.2), opac_range=(0.3, 0.8))
    cam = make_camera(focal=20.0, width=16, height=16)
    bg = np.array([0.2, 0.5, 0.1])
    local = np.random.default_rng(3)
    w_rgb = local.normal(0, 1, (16, 16, 3))
    w_alpha = local.normal(0, 1, (16, 16))
    rasterize(cloud, cam, bg)  # jit warmup outside the clock

    t0 = time.time()
    out, ctx = rasterize(cloud, cam, bg, return_ctx=True)
    grads = rasterize_backward(cloud, cam, bg, None, w_rgb, w_alpha, ctx=ctx)

    def loss_of(c):
        o = rasterize(c, cam, bg)
        return float((o.rgb * w_rgb).sum() + (o.alpha * w_alpha).sum())

    analytic = {"positions": grads.position, "rotations": grads.rotation,
                "log_scales": grads.log_scale,
                "opacity_logits": grads.opacity_logit, "sh": grads.sh}
    worst = 0.0
    h = 1e-4
    for field, g in analytic.items():
        arr = getattr(cloud, field)
        for index in np.ndindex(arr.shape):
            lo, hi = cloud.copy(), cloud.copy()
            getattr(lo, field)[index] -= h
            getattr(hi, field)[index] += h
            num = (loss_of(hi) - loss_of(lo)) / (2 * h)
            err = abs(g[index] - num)
            if abs(num) > 1e-3:
                err /= abs(num)
            worst = max(worst, err)
    elapsed = time.time() - t0
    report("gradient-correctness",
           worst < 1e-3 and elapsed < 10.0,
           f"worst rel err {worst:.2e} (<1e-3), runtime {elapsed:.1f}s (<10s)")


def test_criterion_renderer_oracle_equivalence(rng):
    """Tile rasterizer equals the naive full-sort reference pixel-exactly."""
    worst_rgb = 0.0
    exact = True
    for trial in range(20):
        n = int(rng.integers(3, 51))
        cloud = random_cloud(rng, n)
        cam = make_camera(position=(2.2, 0.5, -0.4), focal=10.0, width=8,
                          height=8)
        bg = rng.random(3)
        out, ctx = rasterize(cloud, cam, bg, return_ctx=True)
        ref_rgb, ref_alpha = reference_render(ctx, 8, 8, bg)
        if NUMBA_ENABLED:
            exact &= bool(np.array_equal(out.rgb, ref_rgb)
                          and np.array_equal(out.alpha, ref_alpha))
        else:
            exact &= bool(np.allclose(out.rgb, ref_rgb, atol=1e-12)
                          and np.allclose(out.alpha, ref_alpha, atol=1e-12))
        worst_rgb = max(worst_rgb, float(np.abs(out.rgb - ref_rgb).max()))
    report("renderer-oracle-equivalence", exact,
           f"20 scenes <=50 splats, max |diff| {worst_rgb:.1e}"
           + (" (bitwise)" if NUMBA_ENABLED else " (numpy backend, 1e-12)"))


def test_criterion_single_layer_reconstruction(ds_two, cloud0_result):
    _, test = ds_two
    cloud, elapsed, _ = cloud0_result
    p, s = eval_layer(cloud, test, 0)
    report("single-layer-reconstruction",
           p >= 25.0 and s >= 0.85 and elapsed < 900.0,
           f"PSNR {p:.2f} dB (>=25), SSIM {s:.3f} (>=0.85), "
           f"train {elapsed:.0f}s (<900s), {len(cloud)} gaussians")


def test_criterion_freezing_contract(ds_two, cloud0_result, layered_runs):
    train, _ = ds_two
    cloud0 = cloud0_result[0]
    runs, _ = layered_runs
    layered = runs["on"]
    mask0 = np.array([True, False])
    identical = True
    for cam in [train.cameras[0], train.cameras[len(train) // 2]]:
        before = rasterize(cloud0, cam, (0.2, 0.4, 0.6))
        after = rasterize(layered, cam, (0.2, 0.4, 0.6), active_layers=mask0)
        identical &= bool(np.array_equal(before.rgb, after.rgb)
                          and np.array_equal(before.alpha, after.alpha))
    report("freezing-contract", identical,
           "layer-0 renders bit-identical before/after layer-1 training")


def test_criterion_inactive_pruning(ds_two, layered_runs):
    _, test = ds_two
    runs, logdir = layered_runs
    on, off = runs["on"], runs["off"]

    def interior(cloud):
        lay1 = cloud.layers == 1
        return int((lay1 & (np.abs(cloud.positions).max(axis=1) < 0.5)).sum())

    n_on, n_off = interior(on), interior(off)
    p_on, _ = eval_layer(on, test, 1)
    p_off, _ = eval_layer(off, test, 1)

    # threshold sequence from the training log: exact decay recurrence
    seq_ok = True
    expected = 0.015
    decayed = {}
    t = 0.015
    cfg = TrainConfig(iterations=2000)
    for it in range(1, 2001):
        if it % 100 == 0 and it > cfg.densify_from:
            t *= 0.975
        decayed[it] = t
    with open(logdir / "layer1_on.csv") as f:
        for row in csv.DictReader(f):
            want = decayed[int(row["iteration"])]
            seq_ok &= float(row["threshold"]) == want

    removed_frac = 1.0 - n_on / max(n_off, 1)
    ok = removed_frac >= 0.5 and p_on >= p_off - 0.5 and seq_ok
    report("inactive-pruning",
           ok,
           f"interior splats {n_off} -> {n_on} ({removed_frac:.0%} removed,"
           f" >=50%), PSNR {p_off:.2f} -> {p_on:.2f} (drop <=0.5),"
           f" T sequence exact: {seq_ok}")


def test_criterion_alpha_training(ds_transparency):
    train, test = ds_transparency
    runs = {}
    for name, kw in (("alpha", dict(background_mode="random",
                                    lambda_alpha=0.2)),
                     ("black", dict(background_mode="fixed",
                                    background_rgb=(0, 0, 0),
                                    lambda_alpha=0.0))):
        cfg = TrainConfig(iterations=1200, seed=0, **kw)
        runs[name] = train_layer(train, None, 0, cfg)

    magenta = np.array([1.0, 0.0, 1.0])
    scores = {}
    for name, cloud in runs.items():
        vals = []
        for cam, gt, lay in test.iter_views():
            out = rasterize(cloud, cam, magenta)
            vals.append(psnr(out.rgb, composite_over(gt, magenta)))
        scores[name] = float(np.mean(vals))
    n_alpha, n_black = len(runs["alpha"]), len(runs["black"])
    ok = (scores["alpha"] >= scores["black"] + 1.0
          and n_alpha <= 1.1 * n_black)
    report("alpha-training", ok,
           f"PSNR over unseen magenta: {scores['black']:.2f} ->"
           f" {scores['alpha']:.2f} (gain >=1 dB), gaussians"
           f" {n_black} vs {n_alpha} (<=+10%)")


def test_criterion_layered_size_advantage(three_layer_clouds):
    layered, standalone = three_layer_clouds
    layered_bytes = len(write_ply(layered))
    standalone_bytes = sum(len(write_ply(c)) for c in standalone)
    ratio = layered_bytes / standalone_bytes
    report("layered-size-advantage", layered_bytes < standalone_bytes,
           f"layered {layered_bytes} B < standalone sum {standalone_bytes} B"
           f" (ratio {ratio:.2f})")


def test_criterion_compression_ladder(layered_runs, three_layer_clouds,
                                      ds_two):
    _, test = ds_two
    runs, _ = layered_runs
    scenes = {"two_layer": runs["on"], "three_layer": three_layer_clouds[0]}
    sizes_ok = True
    details = []
    for name, cloud in scenes.items():
        raw = len(write_ply(cloud))
        low = len(export_viewer(quantize(cloud, "low")))
        clustered = len(export_viewer(quantize(cloud, "clustered")))
        sizes_ok &= clustered < low < raw
        details.append(f"{name}: {clustered}<{low}<{raw}")
    # quality drop of clustered vs low on held-out views (two_layer, layer 1)
    cloud = scenes["two_layer"]
    low_c = dequantize(quantize(cloud, "low"))
    clu_c = dequantize(quantize(cloud, "clustered"))
    p_low, _ = eval_layer(low_c, test, 1)
    p_clu, _ = eval_layer(clu_c, test, 1)
    drop = p_low - p_clu
    report("compression-ladder", sizes_ok and drop <= 1.0,
           "; ".join(details) + f"; clustered PSNR drop {drop:.2f} dB (<=1)")


def test_criterion_shared_stereo_sort(rng):
    cloud = random_cloud(rng, 50_000, spread=0.5)
    distance = 6.0
    cam = make_camera(position=(distance, 0.8, 0.5), width=48, height=48,
                      focal=60.0)
    offset = 0.01 * distance
    shared_l, shared_r, t_shared = render_stereo(
        cloud, StereoRequest(cam, offset, True))
    eye_l, eye_r, t_eye = render_stereo(
        cloud, StereoRequest(cam, offset, False))
    dev = max(float(np.abs(shared_l.rgb - eye_l.rgb).mean()),
              float(np.abs(shared_r.rgb - eye_r.rgb).mean()))
    best_shared, best_eye = np.inf, np.inf
    for _ in range(3):
        _, _, ts = render_stereo(cloud, StereoRequest(cam, offset, True))
        _, _, te = render_stereo(cloud, StereoRequest(cam, offset, False))
        best_shared = min(best_shared, sum(t.sort_ms for t in ts))
        best_eye = min(best_eye, sum(t.sort_ms for t in te))
    ok = best_shared < best_eye and dev <= 2.0 / 255.0
    report("shared-stereo-sort", ok,
           f"sort phase {best_shared:.2f} < {best_eye:.2f} ms,"
           f" image deviation {dev * 255:.3f}/255 (<=2)")


def test_criterion_speed_vs_raymarcher(two_layer_scene, cloud0_result):
    # same visualization state both ways: the trained layer-0 cloud versus
    # the raymarcher under layer 0's transfer function, same resolution
    vol, tfs = two_layer_scene
    cloud = cloud0_result[0]
    size = 256
    cam = generate_cameras(1, vol.center(), 2.4, (0.3, 0.7), width=size,
                           height=size)[0]
    step = vol.reference_step * 0.5  # dataset-generation quality
    from layersplat.volume import raymarch
    raymarch(vol, tfs[0], cam, step)
    render_view(cloud, ViewRequest(cam))
    t_march = min(_time(lambda: raymarch(vol, tfs[0], cam, step))
                  for _ in range(3))
    t_gs = min(_time(lambda: render_view(cloud, ViewRequest(cam)))
               for _ in range(3))
    ratio = t_march / t_gs
    report("speed-vs-raymarcher", ratio >= 2.0,
           f"raymarch {t_march * 1e3:.0f} ms vs splats {t_gs * 1e3:.0f} ms"
           f" at {size}x{size} ({len(cloud)} splats): {ratio:.1f}x (>=2x)")


def _time(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def test_criterion_format_round_trips(rng):
    cloud = random_cloud(rng, 200, layers=3)
    for field in ("positions", "rotations", "log_scales", "opacity_logits",
                  "sh"):
        setattr(cloud, field,
                getattr(cloud, field).astype(np.float32).astype(np.float64))
    back = read_ply(write_ply(cloud))
    ply_ok = all(np.array_equal(getattr(back, f), getattr(cloud, f))
                 for f in ("positions", "rotations", "log_scales",
                           "opacity_logits", "sh", "layers"))
    comp = quantize(cloud, "clustered", k=40)
    back_c = parse_viewer(export_viewer(comp))
    lspl_ok = all(np.array_equal(getattr(comp, f), getattr(back_c, f))
                  for f in ("layers", "positions", "rotations", "log_scales",
                            "opacities", "dc_q", "rest_q", "indices"))
    # foreign layer-free PLY loads as single layer
    single = cloud.select(cloud.layers == 0)
    single.layer_count = 1
    single.layers[:] = 0
    data = write_ply(single)
    end = data.find(b"end_header\n") + 11
    hdr = data[:end].decode().replace("property uchar layer\n", "")
    rec = np.frombuffer(data[end:], np.uint8).reshape(len(single), -1)
    foreign = read_ply(hdr.encode() + rec[:, :-1].tobytes())
    foreign_ok = foreign.layer_count == 1 and \
        np.array_equal(foreign.positions, single.positions)
    report("format-round-trips", ply_ok and lspl_ok and foreign_ok,
           f"ply field-identical: {ply_ok}, lspl field-identical: {lspl_ok},"
           f" foreign single-layer: {foreign_ok}")
