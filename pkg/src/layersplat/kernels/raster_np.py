"""Pure-numpy tile rasterizer fallback.

Vectorizes each 16x16 tile over (pixel, splat). Sequential cumprod/cumsum
reproduce the loop-order arithmetic of the numba kernel bit for bit.
"""

import numpy as np

TILE = 16
ALPHA_MIN = 1.0 / 255.0
T_STOP = 1e-4


def _tile_alpha(mean2d, conic, opac, ks, xs, ys):
    dx = xs[:, None] - mean2d[ks, 0][None, :]
    dy = ys[:, None] - mean2d[ks, 1][None, :]
    power = (-0.5 * (conic[ks, 0][None, :] * dx * dx
                     + conic[ks, 2][None, :] * dy * dy)
             - conic[ks, 1][None, :] * dx * dy)
    return opac[ks][None, :] * np.exp(power), dx, dy


def _composite_state(alpha):
    """Per-(pixel, splat) inclusion mask, pre-splat transmittance, final T."""
    skip = alpha < ALPHA_MIN
    mult = np.where(skip, 1.0, 1.0 - alpha)
    t_run = np.cumprod(mult, axis=1)
    t_before = np.empty_like(t_run)
    t_before[:, 0] = 1.0
    t_before[:, 1:] = t_run[:, :-1]
    include = ~skip & (t_before >= T_STOP)
    # the loop breaks after T first drops below T_STOP; T is then frozen
    below = t_run < T_STOP
    stopped = below.any(axis=1)
    first = np.argmax(below, axis=1)
    t_final = np.where(stopped, t_run[np.arange(t_run.shape[0]), first],
                       t_run[:, -1] if t_run.shape[1] else 1.0)
    return include, t_before, t_final


def _tiles(width, height, tile_start):
    n_tx = (width + TILE - 1) // TILE
    for tile in range(tile_start.shape[0] - 1):
        s0, s1 = tile_start[tile], tile_start[tile + 1]
        if s1 == s0:
            continue
        ty, tx = tile // n_tx, tile % n_tx
        y0, y1 = ty * TILE, min((ty + 1) * TILE, height)
        x0, x1 = tx * TILE, min((tx + 1) * TILE, width)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        yield s0, s1, y0, y1, x0, x1, (xx.ravel() + 0.5), (yy.ravel() + 0.5)


def forward(mean2d, conic, opac, rgb, pair_splat, tile_start, width, height, bg):
    out_rgb = np.zeros((height, width, 3), dtype=np.float64)
    out_alpha = np.zeros((height, width), dtype=np.float64)
    out_t = np.ones((height, width), dtype=np.float64)
    n_contrib = np.zeros((height, width), dtype=np.int32)
    out_rgb += bg
    for s0, s1, y0, y1, x0, x1, xs, ys in _tiles(width, height, tile_start):
        ks = pair_splat[s0:s1]
        alpha, _, _ = _tile_alpha(mean2d, conic, opac, ks, xs, ys)
        include, t_before, t_final = _composite_state(alpha)
        w = np.where(include, t_before * alpha, 0.0)
        shape = (y1 - y0, x1 - x0)
        # last element of cumsum == sequential accumulation order
        acc = np.cumsum(w[:, :, None] * rgb[ks][None, :, :], axis=1)[:, -1]
        out_rgb[y0:y1, x0:x1] = (acc + t_final[:, None] * bg).reshape(*shape, 3)
        out_alpha[y0:y1, x0:x1] = np.cumsum(w, axis=1)[:, -1].reshape(shape)
        out_t[y0:y1, x0:x1] = t_final.reshape(shape)
        n_contrib[y0:y1, x0:x1] = include.sum(axis=1, dtype=np.int32).reshape(shape)
    return out_rgb, out_alpha, out_t, n_contrib


def backward(mean2d, conic, opac, rgb, pair_splat, tile_start, width, height,
             bg, grad_rgb, grad_alpha):
    """Per-pair gradients plus max blend weight, same layout and reduction
    contract as the numba kernel."""
    g_pair = np.zeros((pair_splat.shape[0], 10), dtype=np.float64)
    for s0, s1, y0, y1, x0, x1, xs, ys in _tiles(width, height, tile_start):
        ks = pair_splat[s0:s1]
        alpha, dx, dy = _tile_alpha(mean2d, conic, opac, ks, xs, ys)
        include, t_before, t_final = _composite_state(alpha)
        w = np.where(include, t_before * alpha, 0.0)
        wc = w[:, :, None] * rgb[ks][None, :, :]
        # suffix sums over later contributors, plus the background term
        suf_c = np.cumsum(wc[:, ::-1], axis=1)[:, ::-1] - wc \
            + t_final[:, None, None] * bg
        suf_a = np.cumsum(w[:, ::-1], axis=1)[:, ::-1] - w
        u_rgb = grad_rgb[y0:y1, x0:x1].reshape(-1, 1, 3)
        u_a = grad_alpha[y0:y1, x0:x1].reshape(-1, 1)
        inv1a = np.where(include, 1.0 / (1.0 - alpha), 0.0)
        d_alpha = ((u_rgb * (t_before[:, :, None] * rgb[ks][None, :, :]
                             - suf_c * inv1a[:, :, None])).sum(axis=2)
                   + u_a * (t_before - suf_a * inv1a))
        d_alpha = np.where(include, d_alpha, 0.0)
        g = g_pair[s0:s1]
        g[:, 9] = w.max(axis=0)
        g[:, 6:9] = (u_rgb * w[:, :, None]).sum(axis=0)
        g[:, 5] = (d_alpha * alpha / opac[ks][None, :]).sum(axis=0)
        g_pow = d_alpha * alpha
        g[:, 2] = (g_pow * (-0.5 * dx * dx)).sum(axis=0)
        g[:, 3] = (g_pow * (-dx * dy)).sum(axis=0)
        g[:, 4] = (g_pow * (-0.5 * dy * dy)).sum(axis=0)
        a_, b_, c_ = conic[ks, 0][None, :], conic[ks, 1][None, :], conic[ks, 2][None, :]
        g[:, 0] = (g_pow * (a_ * dx + b_ * dy)).sum(axis=0)
        g[:, 1] = (g_pow * (b_ * dx + c_ * dy)).sum(axis=0)
    return g_pair
