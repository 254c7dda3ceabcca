import math

import numpy as np
import pytest

from layersplat.backend import NUMBA_ENABLED

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    """One visible pass/fail line per acceptance criterion."""
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
from layersplat.cameras import Camera, look_at_quat
from layersplat.splats import ALPHA_MIN, GaussianCloud, inverse_sigmoid


def random_cloud(rng, n, layers=1, sh_degree=3, spread=0.5,
                 scale_range=(0.05, 0.3), opac_range=(0.2, 0.9)):
    k = (sh_degree + 1) ** 2
    return GaussianCloud(
        positions=rng.uniform(-spread, spread, (n, 3)),
        rotations=rng.normal(0, 1, (n, 4)),
        log_scales=np.log(rng.uniform(*scale_range, (n, 3))),
        opacity_logits=inverse_sigmoid(rng.uniform(*opac_range, n)),
        sh=rng.normal(0, 0.3, (n, k, 3)),
        layers=rng.integers(0, layers, n).astype(np.int32),
        frozen=np.zeros(n, bool),
        layer_count=layers, sh_degree=sh_degree)


def make_camera(position=(2.0, 0.6, 0.4), target=(0, 0, 0), focal=20.0,
                width=16, height=16, near=0.05):
    position = np.asarray(position, dtype=np.float64)
    return Camera(position, look_at_quat(position, target), focal,
                  width, height, near)


def reference_render(ctx, width, height, bg):
    """Naive per-pixel full-sort renderer over a preprocessed context.

    Iterates every splat at every pixel in global depth order with the exact
    kernel arithmetic (scalar libm exp, sequential accumulation).
    """
    rgb = np.zeros((height, width, 3))
    alpha = np.zeros((height, width))
    for py in range(height):
        for px in range(width):
            cx, cy = px + 0.5, py + 0.5
            transmit = 1.0
            c = np.zeros(3)
            acc = 0.0
            for s in range(len(ctx.idx)):
                dx = cx - ctx.mean2d[s, 0]
                dy = cy - ctx.mean2d[s, 1]
                power = -0.5 * (ctx.conic[s, 0] * dx * dx
                                + ctx.conic[s, 2] * dy * dy) \
                    - ctx.conic[s, 1] * dx * dy
                a = ctx.opac[s] * math.exp(power)
                if a < ALPHA_MIN:
                    continue
                c = c + transmit * a * ctx.rgb[s]
                acc += transmit * a
                transmit *= 1.0 - a
                if transmit < 1e-4:
                    break
            rgb[py, px] = c + transmit * np.asarray(bg)
            alpha[py, px] = acc
    return rgb, alpha


def assert_pixel_exact(a, b):
    """Bitwise under numba; the numpy backend's SIMD exp may differ by ulps."""
    if NUMBA_ENABLED:
        np.testing.assert_array_equal(a, b)
    else:
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
