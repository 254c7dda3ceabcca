import numpy as np
import pytest

from layersplat.metrics import MetricReport, psnr, ssim, ssim_with_grad


class TestPsnr:
    def test_identical_reports_cap(self, rng):
        a = rng.random((12, 12, 3))
        assert psnr(a, a) == 100.0

    def test_uniform_offset_closed_form(self):
        a = np.zeros((8, 8, 3))
        b = np.full((8, 8, 3), 0.1)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_matches_scalar_formula(self, rng):
        a, b = rng.random((10, 14, 3)), rng.random((10, 14, 3))
        mse = np.mean((a - b) ** 2)
        assert psnr(a, b) == pytest.approx(10 * np.log10(1 / mse), abs=1e-9)

    def test_symmetry(self, rng):
        a, b = rng.random((9, 9, 3)), rng.random((9, 9, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4, 3)), np.zeros((5, 5, 3)))

    def test_monotone_degradation(self, rng):
        base = rng.random((16, 16, 3))
        values = []
        for sigma in (0.01, 0.03, 0.1, 0.3):
            noisy = base + rng.normal(0, sigma, base.shape)
            values.append(psnr(base, noisy))
        assert all(a > b for a, b in zip(values, values[1:]))


def brute_force_ssim(x, y):
    """Sliding fully-interior 11x11 Gaussian windows, straight from the
    definition."""
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    ax = np.arange(11) - 5.0
    g1 = np.exp(-(ax ** 2) / (2 * 1.5 ** 2))
    g1 /= g1.sum()
    k = np.outer(g1, g1)
    totals = []
    for c in range(x.shape[2]):
        vals = []
        for i in range(x.shape[0] - 10):
            for j in range(x.shape[1] - 10):
                wx = x[i:i + 11, j:j + 11, c]
                wy = y[i:i + 11, j:j + 11, c]
                m1, m2 = (k * wx).sum(), (k * wy).sum()
                s11 = (k * wx * wx).sum() - m1 * m1
                s22 = (k * wy * wy).sum() - m2 * m2
                s12 = (k * wx * wy).sum() - m1 * m2
                vals.append(((2 * m1 * m2 + c1) * (2 * s12 + c2))
                            / ((m1 * m1 + m2 * m2 + c1) * (s11 + s22 + c2)))
        totals.append(np.mean(vals))
    return float(np.mean(totals))


class TestSsim:
    def test_identity(self, rng):
        a = rng.random((16, 16, 3))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_negative_for_anticorrelated(self, rng):
        a = 0.5 + 0.3 * np.sign(rng.normal(size=(20, 20, 3)))
        assert ssim(a, 1.0 - a) < 0.0

    def test_matches_brute_force_windows(self, rng):
        x = rng.random((32, 32, 3))
        y = np.clip(x + rng.normal(0, 0.08, x.shape), 0, 1)
        assert ssim(x, y) == pytest.approx(brute_force_ssim(x, y), abs=1e-6)

    def test_symmetry(self, rng):
        a, b = rng.random((14, 18, 3)), rng.random((14, 18, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        a, b = rng.random((14, 14, 3)), rng.random((14, 14, 3))
        _, g = ssim_with_grad(a, b)
        h = 1e-6
        for _ in range(25):
            i, j, c = rng.integers(14), rng.integers(14), rng.integers(3)
            up, dn = a.copy(), a.copy()
            up[i, j, c] += h
            dn[i, j, c] -= h
            num = (ssim(up, b) - ssim(dn, b)) / (2 * h)
            assert g[i, j, c] == pytest.approx(num, rel=1e-4, abs=1e-10)

    def test_grayscale_supported(self, rng):
        a = rng.random((12, 12))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


class TestMetricReport:
    def test_mean_std_rows(self, rng, tmp_path):
        imgs = [rng.random((16, 16, 3)) for _ in range(3)]
        refs = [np.clip(im + rng.normal(0, 0.05, im.shape), 0, 1)
                for im in imgs]
        rep = MetricReport.from_pairs(["a", "b", "c"], imgs, refs)
        # spreadsheet-style aggregate over the three rows
        assert rep.psnr_mean == pytest.approx(np.mean(rep.psnr_values))
        assert rep.psnr_std == pytest.approx(np.std(rep.psnr_values))
        path = tmp_path / "report.csv"
        rep.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "image,psnr,ssim"
        assert len(lines) == 1 + 3 + 2
        assert lines[-2].startswith("mean,")
        assert lines[-1].startswith("std,")
        mean_val = float(lines[-2].split(",")[1])
        assert mean_val == pytest.approx(rep.psnr_mean, abs=1e-5)
