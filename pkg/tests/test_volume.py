import numpy as np
import pytest

from layersplat.cameras import Camera, generate_cameras, look_at_quat
from layersplat.dataset import render_dataset
from layersplat.scenes import SCENE_IDS, build_scene
from layersplat.volume import (TransferFunction, VoxelVolume, apply_transfer,
                               init_point_cloud, raymarch, sample_trilinear)


def tiny_volume(data, spacing=0.1):
    data = np.asarray(data, dtype=np.float64)
    return VoxelVolume(data.shape, (spacing,) * 3, data,
                       (-(np.array(data.shape) - 1) * spacing / 2))


def slab_volume(n=32, density=0.5, spacing=0.05):
    data = np.full((n, n, n), density)
    return VoxelVolume((n, n, n), (spacing,) * 3, data,
                       (-(n - 1) * spacing / 2,) * 3)


def slab_tf(alpha, rgb=(1.0, 0.0, 0.0)):
    return TransferFunction([(0.0, (0, 0, 0, 0)),
                             (0.25, (*rgb, 0.0)),
                             (0.35, (*rgb, alpha)),
                             (0.65, (*rgb, alpha)),
                             (0.75, (*rgb, 0.0)),
                             (1.0, (0, 0, 0, 0))])


class TestTrilinear:
    def test_voxel_center_identity(self):
        rng = np.random.default_rng(3)
        vol = tiny_volume(rng.random((4, 5, 6)))
        for idx in [(0, 0, 0), (3, 4, 5), (1, 2, 3)]:
            p = vol.origin + np.array(idx) * vol.spacing
            assert sample_trilinear(vol, p) == pytest.approx(
                vol.data[idx], abs=1e-12)

    def test_outside_is_zero(self):
        vol = tiny_volume(np.ones((4, 4, 4)))
        assert sample_trilinear(vol, np.array([9.0, 9.0, 9.0])) == 0.0
        assert sample_trilinear(vol, vol.origin - 2 * vol.spacing) == 0.0

    def test_midpoint_linear(self):
        data = np.zeros((3, 3, 3))
        data[0, 1, 1] = 0.2
        data[1, 1, 1] = 0.6
        vol = tiny_volume(data)
        p = vol.origin + np.array([0.5, 1.0, 1.0]) * vol.spacing
        assert sample_trilinear(vol, p) == pytest.approx(0.4, abs=1e-12)

    def test_volume_validation(self):
        with pytest.raises(ValueError):
            tiny_volume(np.full((2, 2, 2), 1.5))
        with pytest.raises(ValueError):
            VoxelVolume((2, 2, 2), (0.1, -0.1, 0.1), np.zeros((2, 2, 2)),
                        np.zeros(3))


class TestTransferFunction:
    def test_breakpoint_exact(self):
        tf = slab_tf(0.7)
        for d, rgba in tf.breakpoints:
            assert np.allclose(apply_transfer(tf, d), rgba, atol=1e-12)

    def test_two_point_midpoint(self):
        tf = TransferFunction([(0.0, (0, 0, 0, 0)), (1.0, (1, 1, 1, 1))])
        assert np.allclose(apply_transfer(tf, 0.5), [0.5] * 4, atol=1e-12)

    def test_zero_density_transparent(self):
        tf = slab_tf(0.9)
        assert apply_transfer(tf, 0.0)[3] == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            TransferFunction([(0.1, (0, 0, 0, 0)), (1.0, (0, 0, 0, 0))])
        with pytest.raises(ValueError):
            TransferFunction([(0.0, (0, 0, 0, 0)), (0.5, (0, 0, 0, 0)),
                              (0.5, (1, 1, 1, 1)), (1.0, (0, 0, 0, 0))])


def axis_camera(vol, width=5, height=5, distance=3.0):
    pos = np.array([0.0, 0.0, -distance])
    return Camera(pos, look_at_quat(pos, [0, 0, 0]), focal=200.0,
                  width=width, height=height)


class TestRaymarch:
    def test_miss_is_transparent(self):
        vol = slab_volume(8)
        pos = np.array([0.0, 0.0, -3.0])
        cam = Camera(pos, look_at_quat(pos, [0, 0, -9.0]), focal=20.0,
                     width=4, height=4)
        img = raymarch(vol, slab_tf(0.9), cam, vol.reference_step / 2)
        assert np.array_equal(img, np.zeros_like(img))

    def test_opaque_slab_saturates_red(self):
        vol = slab_volume(32)
        cam = axis_camera(vol)
        img = raymarch(vol, slab_tf(0.7), cam, vol.reference_step / 2)
        assert np.allclose(img[2, 2], [1, 0, 0, 1], atol=1e-3)

    def test_transparent_slab_matches_analytic_absorption(self):
        # 62.5%-transparent slab: accumulated alpha independent of step size
        vol = slab_volume(64, spacing=0.025)
        thickness_steps = 64.0  # slab fills the volume along the ray
        target = 0.375
        alpha = 1.0 - (1.0 - target) ** (1.0 / thickness_steps)
        cam = axis_camera(vol)
        for scale in (0.9, 0.5, 0.25):
            img = raymarch(vol, slab_tf(alpha), cam,
                           vol.reference_step * scale)
            # boundary fade adds ~1 voxel of absorption: small bias
            assert img[2, 2, 3] == pytest.approx(target, abs=0.02)

    def test_step_halving_converges(self):
        # smooth scene: gaussian blob density, broad transfer ramp
        n = 48
        ax = np.linspace(-1, 1, n)
        x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
        data = np.exp(-3.0 * (x * x + y * y + z * z))
        vol = VoxelVolume((n, n, n), (2.0 / n,) * 3, data, (-1 + 1.0 / n,) * 3)
        tf = TransferFunction([(0.0, (0, 0, 0, 0)),
                               (1.0, (0.9, 0.6, 0.3, 0.35))])
        cam = generate_cameras(1, vol.center(), 3.0, (0.3, 0.7), width=24,
                               height=24)[0]
        a = raymarch(vol, tf, cam, vol.reference_step * 0.5)
        b = raymarch(vol, tf, cam, vol.reference_step * 0.25)
        assert np.abs(a - b).max() < 2.0 / 255.0

    def test_alpha_bounded(self):
        vol, tfs = build_scene("two_layer", 48)
        cam = generate_cameras(1, vol.center(), 2.4, (0.3, 0.7), width=16,
                               height=16)[0]
        img = raymarch(vol, tfs[1], cam, vol.reference_step * 0.5)
        assert img[..., 3].min() >= 0.0
        assert img[..., 3].max() <= 1.0 + 1e-6

    def test_rejects_bad_step(self):
        vol = slab_volume(8)
        with pytest.raises(ValueError):
            raymarch(vol, slab_tf(0.5), axis_camera(vol), 0.0)


class TestInitPointCloud:
    def test_empty_volume_empty_cloud(self):
        vol = tiny_volume(np.zeros((8, 8, 8)))
        pos, rgb = init_point_cloud(vol, slab_tf(0.9), 500, 0.2, seed=1)
        assert len(pos) == 0 and len(rgb) == 0

    def test_solid_cube_points_on_faces(self):
        n = 24
        vol = slab_volume(n, density=0.5, spacing=0.05)
        tf = slab_tf(0.95)
        pos, rgb = init_point_cloud(vol, tf, 2000, 0.2, seed=1)
        assert len(pos) > 1000
        step = vol.reference_step * 0.5
        lo, hi = vol.bounds()
        # every point within one step of a face, none deep inside
        inset = np.minimum(pos - lo, hi - pos).min(axis=1)
        assert inset.max() <= 2.5 * vol.reference_step + step

    def test_emitted_alpha_meets_threshold(self):
        vol, tfs = build_scene("two_layer", 48)
        pos, rgb = init_point_cloud(vol, tfs[1], 800, 0.2, seed=4)
        dens = sample_trilinear(vol, pos)
        alphas = apply_transfer(tfs[1], dens)[:, 3]
        assert (alphas >= 0.2).all()

    def test_threshold_validation(self):
        vol = slab_volume(8)
        with pytest.raises(ValueError):
            init_point_cloud(vol, slab_tf(0.5), 10, 0.0)


class TestScenes:
    def test_unknown_scene(self):
        with pytest.raises(ValueError):
            build_scene("nope")

    @pytest.mark.parametrize("scene", SCENE_IDS)
    def test_layers_reveal_more(self, scene):
        vol, tfs = build_scene(scene, 48)
        cam = generate_cameras(1, vol.center(), 2.4, (0.3, 0.7), width=32,
                               height=32)[0]
        prev = None
        for tf in tfs:
            img = raymarch(vol, tf, cam, vol.reference_step * 0.5)
            cover = (img[..., 3] > 0.2).sum()
            if prev is not None:
                assert cover >= prev * 0.95  # upper layers reveal at least as much
            prev = cover

    def test_two_layer_inner_cube_only(self):
        vol, tfs = build_scene("two_layer", 96)
        cam = generate_cameras(1, vol.center(), 2.4, (0.3, 0.7), width=48,
                               height=48)[0]
        img0 = raymarch(vol, tfs[0], cam, vol.reference_step * 0.5)
        img1 = raymarch(vol, tfs[1], cam, vol.reference_step * 0.5)
        vis0 = img0[..., 3] > 0.5
        vis1 = img1[..., 3] > 0.5
        # layer 0 shows the plain white inner cube
        rgb0 = img0[vis0][:, :3]
        assert rgb0.min() > 0.9
        # layer 1's 5% bigger cube strictly encloses layer 0's silhouette
        assert (vis0 & ~vis1).sum() == 0
        assert vis1.sum() > vis0.sum()

    def test_transparency_net_opacities(self):
        vol, tfs = build_scene("transparency", 96)
        # perpendicular ray through each cube center
        for center, target in (((-0.35, 0.0, 0.0), 0.25),
                               ((0.4, 0.1, 0.0), 0.375)):
            pos = np.array([center[0], center[1], -3.0])
            cam = Camera(pos, look_at_quat(pos, [center[0], center[1], 0.0]),
                         focal=500.0, width=3, height=3)
            img = raymarch(vol, tfs[0], cam, vol.reference_step * 0.4)
            assert img[1, 1, 3] == pytest.approx(target, abs=0.03)


class TestRenderDataset:
    @pytest.fixture(scope="class")
    def scene(self):
        return build_scene("two_layer", 48)

    def test_split_counts(self, scene):
        vol, tfs = scene
        cams = generate_cameras(16, vol.center(), 2.4, (0.2, 0.9), width=24,
                                height=24)
        train, test = render_dataset(vol, tfs, cams, vol.reference_step,
                                     holdout_every=8, ray_budget=500)
        assert len(train) == 14 * 2 and len(test) == 2 * 2
        # layers share identical camera poses
        cams0 = [c.position for c, _, l in train.iter_views() if l == 0]
        cams1 = [c.position for c, _, l in train.iter_views() if l == 1]
        assert all(np.array_equal(a, b) for a, b in zip(cams0, cams1))

    def test_degenerate_holdout_rejected(self, scene):
        vol, tfs = scene
        cams = generate_cameras(4, vol.center(), 2.4, (0.2, 0.9), width=8,
                                height=8)
        with pytest.raises(ValueError):
            render_dataset(vol, tfs, cams, vol.reference_step,
                           holdout_every=1)

    def test_deterministic(self, scene, tmp_path):
        from layersplat.dataset import save_dataset
        vol, tfs = scene
        cams = generate_cameras(6, vol.center(), 2.4, (0.2, 0.9), width=16,
                                height=16)
        outs = []
        for run in range(2):
            train, test = render_dataset(vol, tfs, cams, vol.reference_step,
                                         holdout_every=3, ray_budget=300,
                                         seed=9)
            d = tmp_path / f"run{run}"
            save_dataset(d, train, test, 3)
            outs.append(sorted((p.relative_to(d), p.read_bytes())
                               for p in d.rglob("*") if p.is_file()
                               and p.name != "resolved_config.json"))
        assert outs[0] == outs[1]

    def test_roundtrip(self, scene, tmp_path):
        from layersplat.dataset import load_dataset, save_dataset
        vol, tfs = scene
        cams = generate_cameras(5, vol.center(), 2.4, (0.2, 0.9), width=16,
                                height=16)
        train, test = render_dataset(vol, tfs, cams, vol.reference_step,
                                     holdout_every=5, ray_budget=300, seed=2)
        save_dataset(tmp_path / "ds", train, test, 5)
        tr2, te2 = load_dataset(tmp_path / "ds")
        assert len(tr2) == len(train) and len(te2) == len(test)
        assert tr2.layer_count == train.layer_count
        # 8-bit quantized images round-trip within one level
        assert np.abs(tr2.images[0] - train.images[0]).max() <= 0.5 / 255.0
        assert np.allclose(tr2.cameras[0].position, train.cameras[0].position)
        assert set(tr2.init_points) == set(train.init_points)
