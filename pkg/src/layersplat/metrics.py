"""Image-quality metrics: PSNR and SSIM (Wang et al. convention).

SSIM uses an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, L=1,
statistics over fully-interior windows (valid mode), per-channel maps
averaged into one score. `ssim_with_grad` additionally returns the analytic
gradient of the mean score, which the training loss consumes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0
_WIN = 11
_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2
_HALF = (_WIN - 1) // 2


def _gauss_1d() -> np.ndarray:
    ax = np.arange(_WIN) - (_WIN - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * _SIGMA ** 2))
    return g / g.sum()

_K1D = _gauss_1d()


def _corr_same(x: np.ndarray) -> np.ndarray:
    """Separable 11x11 Gaussian correlation, same size, zero boundary."""
    out = correlate1d(x, _K1D, axis=0, mode="constant")
    return correlate1d(out, _K1D, axis=1, mode="constant")


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10*log10(1/MSE) over all channels; identical images report 100 dB."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _channels(img):
    if img.ndim == 2:
        return img[:, :, None]
    return img


def _filt(x):
    """Valid-mode Gaussian window statistics (fully interior windows)."""
    return _corr_same(x)[_HALF:-_HALF, _HALF:-_HALF]


def _filt_full(x):
    """Full-mode convolution: adjoint of `_filt` for the symmetric kernel."""
    return _corr_same(np.pad(x, _WIN - 1))[_HALF:-_HALF, _HALF:-_HALF]


def ssim(a, b) -> float:
    a, b = _check_pair(a, b)
    return _ssim_core(_channels(a), _channels(b), want_grad=False)[0]


def ssim_with_grad(a, b):
    """(mean SSIM, d mean-SSIM / d a); gradient w.r.t. the first image."""
    a, b = _check_pair(a, b)
    val, grad = _ssim_core(_channels(a), _channels(b), want_grad=True)
    return val, grad.reshape(np.asarray(a).shape)


def _ssim_core(x, y, want_grad):
    h, w, nc = x.shape
    if h < _WIN or w < _WIN:
        raise ValueError(f"images must be at least {_WIN}x{_WIN} for SSIM")
    total = 0.0
    grad = np.zeros_like(x) if want_grad else None
    n_win = (h - _WIN + 1) * (w - _WIN + 1)
    for c in range(nc):
        xc, yc = x[:, :, c], y[:, :, c]
        m1, m2 = _filt(xc), _filt(yc)
        e11, e22, e12 = _filt(xc * xc), _filt(yc * yc), _filt(xc * yc)
        a1 = 2.0 * m1 * m2 + _C1
        a2 = 2.0 * (e12 - m1 * m2) + _C2
        b1 = m1 * m1 + m2 * m2 + _C1
        b2 = (e11 - m1 * m1) + (e22 - m2 * m2) + _C2
        s = (a1 * a2) / (b1 * b2)
        total += float(s.mean())
        if want_grad:
            u = 1.0 / (n_win * nc)
            ds_dm1 = 2.0 * m2 * (a2 - a1) / (b1 * b2) \
                - 2.0 * m1 * s * (1.0 / b1 - 1.0 / b2)
            ds_de11 = -s / b2
            ds_de12 = 2.0 * a1 / (b1 * b2)
            # adjoint of valid-mode correlation is full-mode convolution
            grad[:, :, c] = (_filt_full(u * ds_dm1)
                             + 2.0 * xc * _filt_full(u * ds_de11)
                             + yc * _filt_full(u * ds_de12))
    return total / nc, grad


@dataclass
class MetricReport:
    """Per-image PSNR/SSIM plus their means and standard deviations."""

    ids: list
    psnr_values: list
    ssim_values: list

    @property
    def psnr_mean(self):
        return float(np.mean(self.psnr_values))

    @property
    def psnr_std(self):
        return float(np.std(self.psnr_values))

    @property
    def ssim_mean(self):
        return float(np.mean(self.ssim_values))

    @property
    def ssim_std(self):
        return float(np.std(self.ssim_values))

    @staticmethod
    def from_pairs(ids, rendered, references) -> "MetricReport":
        ps = [psnr(r, g) for r, g in zip(rendered, references)]
        ss = [ssim(r, g) for r, g in zip(rendered, references)]
        return MetricReport(list(ids), ps, ss)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["image", "psnr", "ssim"])
            for i, p, s in zip(self.ids, self.psnr_values, self.ssim_values):
                wr.writerow([i, f"{p:.6f}", f"{s:.6f}"])
            wr.writerow(["mean", f"{self.psnr_mean:.6f}", f"{self.ssim_mean:.6f}"])
            wr.writerow(["std", f"{self.psnr_std:.6f}", f"{self.ssim_std:.6f}"])
