"""Generate viewer parity fixtures with the primary pipeline.

Trains a small two-layer model, exports a clustered .lspl asset, renders the
reference poses with the primary runtime renderer (from the same compressed
data the viewer sees), and records filter counts for toggle/cut parity.

Run from the repository root:  python3 frontend/scripts/make_fixtures.py
"""

import json
from pathlib import Path

import numpy as np

from layersplat.cameras import Camera, generate_cameras, look_at_quat
from layersplat.dataset import render_dataset
from layersplat.formats import dequantize, export_viewer, quantize
from layersplat.render import ViewRequest, render_view, sort_indices
from layersplat.scenes import build_scene
from layersplat.splats import CutPlane
from layersplat.training import TrainConfig, train_layered

OUT = Path(__file__).resolve().parent.parent / "test" / "fixtures"
POSES = [
    {"azimuthDeg": 30.0, "elevationDeg": 25.0},
    {"azimuthDeg": 140.0, "elevationDeg": 45.0},
    {"azimuthDeg": 260.0, "elevationDeg": 10.0},
]
SIZE = 96
FOV = 50.0
DISTANCE = 2.6
TARGET = (0.0, 0.0, 0.0)


def pose_camera(pose) -> Camera:
    az = np.deg2rad(pose["azimuthDeg"])
    el = np.deg2rad(pose["elevationDeg"])
    pos = np.array(TARGET) + DISTANCE * np.array(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    focal = 0.5 * SIZE / np.tan(np.deg2rad(FOV) / 2)
    return Camera(pos, look_at_quat(pos, TARGET), focal, SIZE, SIZE)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    vol, tfs = build_scene("two_layer", 96)
    cams = generate_cameras(24, vol.center(), 2.4, (0.15, 1.1), seed=41,
                            width=48, height=48)
    train, _ = render_dataset(vol, tfs, cams, vol.reference_step * 0.5,
                              holdout_every=8, ray_budget=1500, seed=42)
    cfg = TrainConfig(iterations=700, seed=0)
    cloud, _ = train_layered(train, cfg)

    comp = quantize(cloud, "clustered", k=256, seed=0)
    blob = export_viewer(comp)
    (OUT / "two_layer.lspl").write_bytes(blob)

    # the parity reference renders from the same quantized data
    seen = dequantize(comp)
    meta = {"size": SIZE, "fovDeg": FOV, "distance": DISTANCE,
            "target": list(TARGET), "splatCount": len(comp),
            "layerCount": comp.layer_count,
            "layerCounts": comp.layer_counts().tolist(), "poses": [],
            "filterCounts": [], "background": [0.0, 0.0, 0.0]}

    states = [
        {"name": "all", "layers": [True, True], "cut": None},
        {"name": "layer0", "layers": [True, False], "cut": None},
        {"name": "cut_layer1",
         "layers": [True, True],
         "cut": {"axis": 0, "offset": 0.0, "layerMask": [False, True]}},
    ]
    for p_i, pose in enumerate(POSES):
        cam = pose_camera(pose)
        for st in states:
            cut = None
            if st["cut"] is not None:
                normal = np.zeros(3)
                normal[st["cut"]["axis"]] = 1.0
                cut = CutPlane(normal, st["cut"]["offset"],
                               np.array(st["cut"]["layerMask"]))
            mask = np.array(st["layers"])
            out, _ = render_view(seen, ViewRequest(cam, mask, cut, (0, 0, 0)))
            name = f"pose{p_i}_{st['name']}"
            (OUT / f"{name}.bin").write_bytes(
                out.rgb.astype("<f4").tobytes())
            meta["poses"].append({"pose": pose, "state": st, "file":
                                  f"{name}.bin"})
    # filter-count parity (layer toggles and a cut sweep, no frustum test)
    sweeps = [{"layers": [True, True], "cut": None},
              {"layers": [True, False], "cut": None},
              {"layers": [False, True], "cut": None}]
    for offset in (-0.6, -0.2, 0.0, 0.2, 0.6):
        sweeps.append({"layers": [True, True],
                       "cut": {"axis": 0, "offset": offset,
                               "layerMask": [True, True]}})
    eye = pose_camera(POSES[0]).position
    for st in sweeps:
        cut = None
        if st["cut"] is not None:
            normal = np.zeros(3)
            normal[st["cut"]["axis"]] = 1.0
            cut = CutPlane(normal, st["cut"]["offset"],
                           np.array(st["cut"]["layerMask"]))
        count = len(sort_indices(seen, eye, np.array(st["layers"]), cut))
        meta["filterCounts"].append({"state": st, "count": int(count)})

    (OUT / "meta.json").write_text(json.dumps(meta, indent=1))
    print(f"fixtures written to {OUT}: {len(comp)} splats,"
          f" {len(meta['poses'])} reference renders")


if __name__ == "__main__":
    main()
