"""Tile-based compositing kernels (forward and adjoint).

Tiles and pixels are walked serially in a fixed order, which keeps the
per-Gaussian gradient reduction deterministic and the kernels reentrant.
"""

import math

import numba as nb
import numpy as np

TILE = 16
# log-space pre-check margin; anything it rejects is certainly below alpha_min
SKIP_MARGIN = 1e-6


@nb.njit(cache=True, nogil=True)
def _log_cutoffs(opacity, alpha_min):
    out = np.empty(opacity.shape[0])
    for i in range(opacity.shape[0]):
        if opacity[i] > 0.0:
            out[i] = math.log(alpha_min / opacity[i]) - SKIP_MARGIN
        else:
            out[i] = np.inf
    return out


@nb.njit(cache=True, nogil=True)
def composite_forward(width, height, tile_offsets, tile_list, mean2d, conic, opacity,
                      color, depth, background, alpha_min, alpha_max, t_stop):
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    out_color = np.zeros((height, width, 3))
    out_depth = np.zeros((height, width))
    out_accum = np.zeros((height, width))
    out_final_t = np.ones((height, width))
    out_last = np.zeros((height, width), dtype=np.int64)
    out_count = np.zeros((height, width), dtype=np.int64)
    cutoff = _log_cutoffs(opacity, alpha_min)
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            tile = ty * tiles_x + tx
            start = tile_offsets[tile]
            end = tile_offsets[tile + 1]
            for py in range(ty * TILE, min((ty + 1) * TILE, height)):
                for px in range(tx * TILE, min((tx + 1) * TILE, width)):
                    pxc = px + 0.5
                    pyc = py + 0.5
                    T = 1.0
                    r = 0.0
                    g = 0.0
                    b = 0.0
                    d = 0.0
                    wsum = 0.0
                    last = start
                    count = 0
                    for k in range(start, end):
                        if T < t_stop:
                            break
                        last = k + 1
                        i = tile_list[k]
                        dx = pxc - mean2d[i, 0]
                        dy = pyc - mean2d[i, 1]
                        power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) \
                            - conic[i, 1] * dx * dy
                        if power < cutoff[i]:
                            continue
                        alpha = opacity[i] * math.exp(power)
                        if alpha > alpha_max:
                            alpha = alpha_max
                        if alpha < alpha_min:
                            continue
                        w = alpha * T
                        r += w * color[i, 0]
                        g += w * color[i, 1]
                        b += w * color[i, 2]
                        d += w * depth[i]
                        wsum += w
                        T = T * (1.0 - alpha)
                        count += 1
                    out_color[py, px, 0] = r + background[0] * T
                    out_color[py, px, 1] = g + background[1] * T
                    out_color[py, px, 2] = b + background[2] * T
                    out_depth[py, px] = d
                    out_accum[py, px] = wsum
                    out_final_t[py, px] = T
                    out_last[py, px] = last
                    out_count[py, px] = count
    return out_color, out_depth, out_accum, out_final_t, out_last, out_count


@nb.njit(cache=True, nogil=True)
def composite_backward(width, height, tile_offsets, tile_list, mean2d, conic, opacity,
                       color, depth, background, alpha_min, alpha_max, t_stop,
                       out_last, out_final_t, grad_color, grad_depth, n_splats):
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    g_mean2d = np.zeros((n_splats, 2))
    g_conic = np.zeros((n_splats, 3))
    g_opacity = np.zeros(n_splats)
    g_color = np.zeros((n_splats, 3))
    g_depth = np.zeros(n_splats)
    max_len = 0
    for t in range(tiles_x * tiles_y):
        max_len = max(max_len, tile_offsets[t + 1] - tile_offsets[t])
    buf_i = np.empty(max_len, dtype=np.int64)
    buf_alpha = np.empty(max_len)
    buf_t = np.empty(max_len)
    buf_g = np.empty(max_len)
    buf_dx = np.empty(max_len)
    buf_dy = np.empty(max_len)
    buf_clamped = np.empty(max_len, dtype=np.bool_)
    cutoff = _log_cutoffs(opacity, alpha_min)
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            tile = ty * tiles_x + tx
            start = tile_offsets[tile]
            for py in range(ty * TILE, min((ty + 1) * TILE, height)):
                for px in range(tx * TILE, min((tx + 1) * TILE, width)):
                    gr = grad_color[py, px, 0]
                    gg = grad_color[py, px, 1]
                    gb = grad_color[py, px, 2]
                    gd = grad_depth[py, px]
                    if gr == 0.0 and gg == 0.0 and gb == 0.0 and gd == 0.0:
                        continue
                    pxc = px + 0.5
                    pyc = py + 0.5
                    # replay the forward traversal, recording contributors
                    T = 1.0
                    m = 0
                    for k in range(start, out_last[py, px]):
                        i = tile_list[k]
                        dx = pxc - mean2d[i, 0]
                        dy = pyc - mean2d[i, 1]
                        power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) \
                            - conic[i, 1] * dx * dy
                        if power < cutoff[i]:
                            continue
                        G = math.exp(power)
                        alpha = opacity[i] * G
                        clamped = alpha > alpha_max
                        if clamped:
                            alpha = alpha_max
                        if alpha < alpha_min:
                            continue
                        buf_i[m] = i
                        buf_alpha[m] = alpha
                        buf_t[m] = T
                        buf_g[m] = G
                        buf_dx[m] = dx
                        buf_dy[m] = dy
                        buf_clamped[m] = clamped
                        m += 1
                        T = T * (1.0 - alpha)
                    # suffix: everything composited behind the current splat
                    suffix = (gr * background[0] + gg * background[1] + gb * background[2]) \
                        * out_final_t[py, px]
                    for j in range(m - 1, -1, -1):
                        i = buf_i[j]
                        alpha = buf_alpha[j]
                        Tj = buf_t[j]
                        w = alpha * Tj
                        gc = gr * color[i, 0] + gg * color[i, 1] + gb * color[i, 2] + gd * depth[i]
                        g_alpha = gc * Tj - suffix / (1.0 - alpha)
                        suffix += gc * w
                        g_color[i, 0] += gr * w
                        g_color[i, 1] += gg * w
                        g_color[i, 2] += gb * w
                        g_depth[i] += gd * w
                        if buf_clamped[j]:
                            continue
                        G = buf_g[j]
                        dx = buf_dx[j]
                        dy = buf_dy[j]
                        g_opacity[i] += g_alpha * G
                        gG = g_alpha * opacity[i] * G
                        g_mean2d[i, 0] += gG * (conic[i, 0] * dx + conic[i, 1] * dy)
                        g_mean2d[i, 1] += gG * (conic[i, 1] * dx + conic[i, 2] * dy)
                        g_conic[i, 0] += -0.5 * gG * dx * dx
                        g_conic[i, 1] += -gG * dx * dy
                        g_conic[i, 2] += -0.5 * gG * dy * dy
    return g_mean2d, g_conic, g_opacity, g_color, g_depth
