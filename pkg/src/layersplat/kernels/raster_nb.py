"""Numba tile rasterizer: front-to-back alpha compositing and its adjoint.

Splats arrive depth-sorted; `pair_splat[tile_start[t]:tile_start[t+1]]` lists
the splats overlapping tile t in that global order. The backward pass walks
each pixel's contributor list in reverse using recorded transmittances, so no
division by (1 - alpha) chains is needed. Tiles are 16x16.
"""

import numpy as np
from numba import njit, prange

TILE = 16
ALPHA_MIN = 1.0 / 255.0
T_STOP = 1e-4
# exp(power) < 1/255 whenever power < -7 (even at opacity 1), so the splat
# would be skipped by the ALPHA_MIN test anyway; bail before the exp call
POWER_SKIP = -7.0


@njit(cache=True, parallel=True)
def forward(mean2d, conic, opac, rgb, pair_splat, tile_start, width, height, bg):
    n_tx = (width + TILE - 1) // TILE
    n_tiles = tile_start.shape[0] - 1
    out_rgb = np.zeros((height, width, 3), dtype=np.float64)
    out_alpha = np.zeros((height, width), dtype=np.float64)
    out_t = np.ones((height, width), dtype=np.float64)
    n_contrib = np.zeros((height, width), dtype=np.int32)
    for tile in prange(n_tiles):
        s0, s1 = tile_start[tile], tile_start[tile + 1]
        ty, tx = tile // n_tx, tile % n_tx
        y1 = min((ty + 1) * TILE, height)
        x1 = min((tx + 1) * TILE, width)
        for py in range(ty * TILE, y1):
            cy = py + 0.5
            for px in range(tx * TILE, x1):
                cx = px + 0.5
                transmit = 1.0
                cr = cg = cb = acc_a = 0.0
                cnt = 0
                for k in range(s0, s1):
                    s = pair_splat[k]
                    dx = cx - mean2d[s, 0]
                    dy = cy - mean2d[s, 1]
                    power = -0.5 * (conic[s, 0] * dx * dx
                                    + conic[s, 2] * dy * dy) \
                        - conic[s, 1] * dx * dy
                    if power < POWER_SKIP:
                        continue
                    alpha = opac[s] * np.exp(power)
                    if alpha < ALPHA_MIN:
                        continue
                    w = transmit * alpha
                    cr += w * rgb[s, 0]
                    cg += w * rgb[s, 1]
                    cb += w * rgb[s, 2]
                    acc_a += w
                    transmit *= 1.0 - alpha
                    cnt += 1
                    if transmit < T_STOP:
                        break
                out_rgb[py, px, 0] = cr + transmit * bg[0]
                out_rgb[py, px, 1] = cg + transmit * bg[1]
                out_rgb[py, px, 2] = cb + transmit * bg[2]
                out_alpha[py, px] = acc_a
                out_t[py, px] = transmit
                n_contrib[py, px] = cnt
    return out_rgb, out_alpha, out_t, n_contrib


@njit(cache=True, parallel=True)
def backward(mean2d, conic, opac, rgb, pair_splat, tile_start, width, height,
             bg, grad_rgb, grad_alpha):
    """Per-pair gradients [g_mx, g_my, g_a, g_b, g_c, g_opac, g_r, g_g, g_b]
    plus a 10th column holding the pair's maximum blend weight T*alpha.

    Each tile owns a disjoint slice of the pair list, so tiles run in
    parallel; the caller scatter-reduces pairs to splats in pair order,
    which keeps results independent of thread count.
    """
    n_tx = (width + TILE - 1) // TILE
    n_tiles = tile_start.shape[0] - 1
    n_pairs = pair_splat.shape[0]
    g_pair = np.zeros((n_pairs, 10), dtype=np.float64)
    for tile in prange(n_tiles):
        s0, s1 = tile_start[tile], tile_start[tile + 1]
        if s1 == s0:
            continue
        buf_k = np.empty(s1 - s0, dtype=np.int64)
        buf_t = np.empty(s1 - s0, dtype=np.float64)
        buf_a = np.empty(s1 - s0, dtype=np.float64)
        ty, tx = tile // n_tx, tile % n_tx
        y1 = min((ty + 1) * TILE, height)
        x1 = min((tx + 1) * TILE, width)
        for py in range(ty * TILE, y1):
            cy = py + 0.5
            for px in range(tx * TILE, x1):
                cx = px + 0.5
                transmit = 1.0
                n = 0
                for k in range(s0, s1):
                    s = pair_splat[k]
                    dx = cx - mean2d[s, 0]
                    dy = cy - mean2d[s, 1]
                    power = -0.5 * (conic[s, 0] * dx * dx
                                    + conic[s, 2] * dy * dy) \
                        - conic[s, 1] * dx * dy
                    if power < POWER_SKIP:
                        continue
                    alpha = opac[s] * np.exp(power)
                    if alpha < ALPHA_MIN:
                        continue
                    buf_k[n] = k
                    buf_t[n] = transmit
                    buf_a[n] = alpha
                    n += 1
                    transmit *= 1.0 - alpha
                    if transmit < T_STOP:
                        break
                if n == 0:
                    continue
                ur = grad_rgb[py, px, 0]
                ug = grad_rgb[py, px, 1]
                ub = grad_rgb[py, px, 2]
                ua = grad_alpha[py, px]
                # suffix sums of later contributions (plus background term)
                sr = transmit * bg[0]
                sg = transmit * bg[1]
                sb = transmit * bg[2]
                sa = 0.0
                for i in range(n - 1, -1, -1):
                    k = buf_k[i]
                    s = pair_splat[k]
                    t_i = buf_t[i]
                    a_i = buf_a[i]
                    w = t_i * a_i
                    if w > g_pair[k, 9]:
                        g_pair[k, 9] = w
                    g_pair[k, 6] += ur * w
                    g_pair[k, 7] += ug * w
                    g_pair[k, 8] += ub * w
                    inv1a = 1.0 / (1.0 - a_i)
                    d_alpha = (ur * (t_i * rgb[s, 0] - sr * inv1a)
                               + ug * (t_i * rgb[s, 1] - sg * inv1a)
                               + ub * (t_i * rgb[s, 2] - sb * inv1a)
                               + ua * (t_i - sa * inv1a))
                    g_pair[k, 5] += d_alpha * a_i / opac[s]
                    dx = cx - mean2d[s, 0]
                    dy = cy - mean2d[s, 1]
                    g_pow = d_alpha * a_i  # d_alpha * opac * exp(power)
                    g_pair[k, 2] += g_pow * (-0.5 * dx * dx)
                    g_pair[k, 3] += g_pow * (-dx * dy)
                    g_pair[k, 4] += g_pow * (-0.5 * dy * dy)
                    g_pair[k, 0] += g_pow * (conic[s, 0] * dx
                                             + conic[s, 1] * dy)
                    g_pair[k, 1] += g_pow * (conic[s, 1] * dx
                                             + conic[s, 2] * dy)
                    sr += w * rgb[s, 0]
                    sg += w * rgb[s, 1]
                    sb += w * rgb[s, 2]
                    sa += w
    return g_pair
