"""Numba kernels for tile-based splatting: binning, compositing, gradients.

All kernels operate on surfels already culled and sorted front-to-back;
within a tile the CSR list preserves that global order. The forward pass
parallelizes over tiles (disjoint pixel writes keep it deterministic); the
backward pass runs tiles serially because gradients from different tiles
accumulate into shared per-surfel slots.
"""

import math

import numpy as np
from numba import njit, prange


@njit(cache=True)
def fill_tile_lists(means, radii, tile, tiles_x, tiles_y, tile_offsets, tile_lists):
    """Scatter surfel indices into per-tile CSR lists, preserving order.

    tile_offsets (tiles_x * tiles_y + 1,) must hold the running start of
    each tile's slice; tile_lists is the flat output buffer.
    """
    m = means.shape[0]
    cursor = tile_offsets[:-1].copy()
    for i in range(m):
        x0 = int(math.floor((means[i, 0] - radii[i]) / tile))
        x1 = int(math.ceil((means[i, 0] + radii[i]) / tile))
        y0 = int(math.floor((means[i, 1] - radii[i]) / tile))
        y1 = int(math.ceil((means[i, 1] + radii[i]) / tile))
        x0 = max(x0, 0); x1 = min(x1, tiles_x)
        y0 = max(y0, 0); y1 = min(y1, tiles_y)
        for ty in range(y0, y1):
            for tx in range(x0, x1):
                t = ty * tiles_x + tx
                tile_lists[cursor[t]] = i
                cursor[t] += 1


@njit(cache=True)
def tile_histogram(means, radii, tile, tiles_x, tiles_y):
    """Number of candidate surfels per tile."""
    m = means.shape[0]
    hist = np.zeros(tiles_x * tiles_y, dtype=np.int64)
    for i in range(m):
        x0 = int(math.floor((means[i, 0] - radii[i]) / tile))
        x1 = int(math.ceil((means[i, 0] + radii[i]) / tile))
        y0 = int(math.floor((means[i, 1] - radii[i]) / tile))
        y1 = int(math.ceil((means[i, 1] + radii[i]) / tile))
        x0 = max(x0, 0); x1 = min(x1, tiles_x)
        y0 = max(y0, 0); y1 = min(y1, tiles_y)
        for ty in range(y0, y1):
            for tx in range(x0, x1):
                hist[ty * tiles_x + tx] += 1
    return hist


@njit(cache=True, parallel=True)
def composite_forward(surfel_rows, tile_offsets, tile_lists, width, height,
                      tile, background, clamp, floor, exp_cutoff,
                      out_color, out_depth, out_alpha, tile_counts):
    """Front-to-back alpha compositing, parallel over tiles.

    surfel_rows (M, 10) packs per-surfel data as
    [mean_u, mean_v, conic A, B, C, r, g, b, omod, z]; one cache-friendly row
    per surfel. Within each tile, surfels are processed in depth-sorted
    batches: contributions a = min(clamp, omod * exp(-e)) for the batch are
    evaluated into a dense buffer first, then blended sequentially per pixel
    (exact front-to-back semantics, early-out when transmittance falls below
    ``floor``). Output color includes background weighted by the final
    transmittance; out_depth is the raw alpha-weighted depth sum.
    tile_counts collects composited-pair counts per tile.
    """
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    n_tiles = tiles_x * tiles_y
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        x_lo = tx * tile
        x_hi = min(x_lo + tile, width)
        y_lo = ty * tile
        y_hi = min(y_lo + tile, height)
        k_lo = tile_offsets[t]
        k_hi = tile_offsets[t + 1]
        pairs = 0
        for y in range(y_lo, y_hi):
            py = y + 0.5
            for x in range(x_lo, x_hi):
                px = x + 0.5
                trans = 1.0
                r = 0.0; g = 0.0; b = 0.0
                dsum = 0.0
                for k in range(k_lo, k_hi):
                    i = tile_lists[k]
                    dx = px - surfel_rows[i, 0]
                    dy = py - surfel_rows[i, 1]
                    if dx * dx > surfel_rows[i, 10] or dy * dy > surfel_rows[i, 11]:
                        continue
                    e = 0.5 * (surfel_rows[i, 2] * dx * dx
                               + surfel_rows[i, 4] * dy * dy) \
                        + surfel_rows[i, 3] * dx * dy
                    if e > exp_cutoff:
                        continue
                    a = surfel_rows[i, 8] * math.exp(-e)
                    if a > clamp:
                        a = clamp
                    if a <= 0.0:
                        continue
                    w = a * trans
                    r += surfel_rows[i, 5] * w
                    g += surfel_rows[i, 6] * w
                    b += surfel_rows[i, 7] * w
                    dsum += surfel_rows[i, 9] * w
                    trans *= 1.0 - a
                    pairs += 1
                    if trans < floor:
                        break
                out_color[y, x, 0] = r + background[0] * trans
                out_color[y, x, 1] = g + background[1] * trans
                out_color[y, x, 2] = b + background[2] * trans
                out_depth[y, x] = dsum
                out_alpha[y, x] = 1.0 - trans
        tile_counts[t] = pairs


@njit(cache=True)
def composite_backward(surfel_rows, tile_offsets, tile_lists, width, height,
                       tile, clamp, floor, exp_cutoff,
                       forward_color, grad_color,
                       grad_omod, grad_conic):
    """Gradients of the composited color w.r.t. modulated opacity and conic.

    Replays the forward traversal per pixel (same skip/early-out rules) and,
    using the forward image as the pixel total, forms the suffix sum needed
    for each contribution without unstable divisions. Accumulates:

        grad_omod (M,):   dL/d(omod_i)
        grad_conic (M, 3): dL/d(A, B, C) with e = 0.5 A dx^2 + B dx dy + 0.5 C dy^2

    Colors, means, and depths are treated as constants (frozen parameters).
    """
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    n_tiles = tiles_x * tiles_y
    for t in range(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        x_lo = tx * tile
        x_hi = min(x_lo + tile, width)
        y_lo = ty * tile
        y_hi = min(y_lo + tile, height)
        k_lo = tile_offsets[t]
        k_hi = tile_offsets[t + 1]
        for y in range(y_lo, y_hi):
            py = y + 0.5
            for x in range(x_lo, x_hi):
                gr = grad_color[y, x, 0]
                gg = grad_color[y, x, 1]
                gb = grad_color[y, x, 2]
                if gr == 0.0 and gg == 0.0 and gb == 0.0:
                    continue
                px = x + 0.5
                ct_r = forward_color[y, x, 0]
                ct_g = forward_color[y, x, 1]
                ct_b = forward_color[y, x, 2]
                pre_r = 0.0; pre_g = 0.0; pre_b = 0.0
                trans = 1.0
                for k in range(k_lo, k_hi):
                    i = tile_lists[k]
                    dx = px - surfel_rows[i, 0]
                    dy = py - surfel_rows[i, 1]
                    if dx * dx > surfel_rows[i, 10] or dy * dy > surfel_rows[i, 11]:
                        continue
                    e = 0.5 * (surfel_rows[i, 2] * dx * dx
                               + surfel_rows[i, 4] * dy * dy) \
                        + surfel_rows[i, 3] * dx * dy
                    if e > exp_cutoff:
                        continue
                    gauss = math.exp(-e)
                    a = surfel_rows[i, 8] * gauss
                    clamped = a > clamp
                    if clamped:
                        a = clamp
                    if a <= 0.0:
                        continue
                    w = a * trans
                    con_r = surfel_rows[i, 5] * w
                    con_g = surfel_rows[i, 6] * w
                    con_b = surfel_rows[i, 7] * w
                    h = 1.0 - a
                    # suffix = total - prefix - own contribution
                    s_r = ct_r - pre_r - con_r
                    s_g = ct_g - pre_g - con_g
                    s_b = ct_b - pre_b - con_b
                    if h < 1e-12:
                        dl_da = (gr * surfel_rows[i, 5] + gg * surfel_rows[i, 6]
                                 + gb * surfel_rows[i, 7]) * trans
                    else:
                        dl_da = (gr * (surfel_rows[i, 5] * trans - s_r / h)
                                 + gg * (surfel_rows[i, 6] * trans - s_g / h)
                                 + gb * (surfel_rows[i, 7] * trans - s_b / h))
                    if not clamped:
                        grad_omod[i] += dl_da * gauss
                        dl_de = -dl_da * surfel_rows[i, 8] * gauss
                        grad_conic[i, 0] += dl_de * 0.5 * dx * dx
                        grad_conic[i, 1] += dl_de * dx * dy
                        grad_conic[i, 2] += dl_de * 0.5 * dy * dy
                    pre_r += con_r
                    pre_g += con_g
                    pre_b += con_b
                    trans *= h
                    if trans < floor:
                        break
