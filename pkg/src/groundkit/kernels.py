"""Hot numeric kernels with numba and pure-numpy variants.

Every kernel ships in two flavours: ``*_numba`` (``@njit``, compiled lazily on
first call) and ``*_numpy``. The module-level dispatch names bind one of them
according to :data:`groundkit._accel.USE_NUMBA`. Both variants are exported so
tests can cross-check them and ``benchmarks/bench_kernels.py`` can compare.

Convolution is im2col + BLAS in both flavours; numba only owns the gather and
scatter loops, the matrix product always goes through ``np.dot``.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# conv2d: im2col gather / col2im scatter
# ---------------------------------------------------------------------------


@njit(cache=True)
def _im2col_numba(xp, kh, kw, stride, out_h, out_w):
    cin = xp.shape[0]
    cols = np.empty((cin * kh * kw, out_h * out_w), dtype=np.float32)
    row = 0
    for ci in range(cin):
        for i in range(kh):
            for j in range(kw):
                k = 0
                for oh in range(out_h):
                    src = oh * stride + i
                    for ow in range(out_w):
                        cols[row, k] = xp[ci, src, ow * stride + j]
                        k += 1
                row += 1
    return cols


def im2col_numpy(xp, kh, kw, stride, out_h, out_w):
    cin = xp.shape[0]
    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(cin, kh, kw, out_h, out_w),
        strides=(s0, s1, s2, s1 * stride, s2 * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(cin * kh * kw, out_h * out_w)


def im2col_numba(xp, kh, kw, stride, out_h, out_w):
    return _im2col_numba(xp, kh, kw, stride, out_h, out_w)


@njit(cache=True)
def _col2im_numba(dcols, cin, kh, kw, stride, out_h, out_w, in_h, in_w):
    dxp = np.zeros((cin, in_h, in_w), dtype=np.float32)
    row = 0
    for ci in range(cin):
        for i in range(kh):
            for j in range(kw):
                k = 0
                for oh in range(out_h):
                    dst = oh * stride + i
                    for ow in range(out_w):
                        dxp[ci, dst, ow * stride + j] += dcols[row, k]
                        k += 1
                row += 1
    return dxp


def col2im_numpy(dcols, cin, kh, kw, stride, out_h, out_w, in_h, in_w):
    dxp = np.zeros((cin, in_h, in_w), dtype=np.float32)
    d = dcols.reshape(cin, kh, kw, out_h, out_w)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + (out_h - 1) * stride + 1 : stride,
                j : j + (out_w - 1) * stride + 1 : stride] += d[:, i, j]
    return dxp


def col2im_numba(dcols, cin, kh, kw, stride, out_h, out_w, in_h, in_w):
    return _col2im_numba(
        np.ascontiguousarray(dcols), cin, kh, kw, stride, out_h, out_w, in_h, in_w
    )


im2col = im2col_numba if USE_NUMBA else im2col_numpy
col2im = col2im_numba if USE_NUMBA else col2im_numpy


def conv_out_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def conv2d_forward(x, w, stride, padding):
    """x: (Cin,H,W) f32, w: (Cout,Cin,kh,kw) f32 -> (y, cols, xp_shape)."""
    cout, cin, kh, kw = w.shape
    if padding:
        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    else:
        xp = np.ascontiguousarray(x)
    out_h = conv_out_size(x.shape[1], kh, stride, padding)
    out_w = conv_out_size(x.shape[2], kw, stride, padding)
    cols = im2col(xp, kh, kw, stride, out_h, out_w)
    y = np.dot(w.reshape(cout, -1), cols).reshape(cout, out_h, out_w)
    return y, cols, xp.shape


def conv2d_backward(dy, cols, xp_shape, x_shape, w, stride, padding):
    """Gradients of conv2d_forward w.r.t. input and weight."""
    cout, cin, kh, kw = w.shape
    out_h, out_w = dy.shape[1], dy.shape[2]
    dy2 = np.ascontiguousarray(dy.reshape(cout, -1))
    dw = np.dot(dy2, cols.T).reshape(w.shape)
    dcols = np.dot(w.reshape(cout, -1).T, dy2)
    dxp = col2im(dcols, cin, kh, kw, stride, out_h, out_w, xp_shape[1], xp_shape[2])
    if padding:
        dxp = dxp[:, padding : padding + x_shape[1], padding : padding + x_shape[2]]
    return np.ascontiguousarray(dxp), dw


# ---------------------------------------------------------------------------
# bilinear resize (half-pixel centers, clamped borders)
# ---------------------------------------------------------------------------


def _resize_tables(src, dst):
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = (pos - lo).astype(np.float32)
    return lo, hi, frac


@njit(cache=True)
def _bilinear_numba(img, y0, y1, fy, x0, x1, fx):
    out_h = y0.shape[0]
    out_w = x0.shape[0]
    ch = img.shape[2]
    out = np.empty((out_h, out_w, ch), dtype=np.float32)
    for oy in range(out_h):
        a, b, wy = y0[oy], y1[oy], fy[oy]
        for ox in range(out_w):
            c, d, wx = x0[ox], x1[ox], fx[ox]
            for k in range(ch):
                top = img[a, c, k] * (1.0 - wx) + img[a, d, k] * wx
                bot = img[b, c, k] * (1.0 - wx) + img[b, d, k] * wx
                out[oy, ox, k] = top * (1.0 - wy) + bot * wy
    return out


def bilinear_resize_numpy(img, out_h, out_w):
    img = np.ascontiguousarray(img, dtype=np.float32)
    y0, y1, fy = _resize_tables(img.shape[0], out_h)
    x0, x1, fx = _resize_tables(img.shape[1], out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def bilinear_resize_numba(img, out_h, out_w):
    img = np.ascontiguousarray(img, dtype=np.float32)
    y0, y1, fy = _resize_tables(img.shape[0], out_h)
    x0, x1, fx = _resize_tables(img.shape[1], out_w)
    return _bilinear_numba(img, y0, y1, fy, x0, x1, fx)


bilinear_resize = bilinear_resize_numba if USE_NUMBA else bilinear_resize_numpy


# ---------------------------------------------------------------------------
# CLAHE on a single luminance plane
# ---------------------------------------------------------------------------


def _tile_edges(size, tiles):
    return [((t * size) // tiles, ((t + 1) * size) // tiles) for t in range(tiles)]


def clahe_tile_maps(y_plane, tiles_y, tiles_x, clip_limit):
    """Per-tile clip-limited equalization maps, shape (tiles_y, tiles_x, 256).

    Excess above the clip is redistributed uniformly over all 256 bins; the
    mapping is round(255 * cdf / area).
    """
    levels = np.clip(np.rint(y_plane), 0, 255).astype(np.int64)
    maps = np.empty((tiles_y, tiles_x, 256), dtype=np.float32)
    for ty, (ry0, ry1) in enumerate(_tile_edges(y_plane.shape[0], tiles_y)):
        for tx, (cx0, cx1) in enumerate(_tile_edges(y_plane.shape[1], tiles_x)):
            tile = levels[ry0:ry1, cx0:cx1]
            area = tile.size
            hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
            clip = max(1.0, clip_limit * area / 256.0)
            excess = np.maximum(hist - clip, 0.0).sum()
            hist = np.minimum(hist, clip) + excess / 256.0
            cdf = np.cumsum(hist)
            maps[ty, tx] = np.clip(np.rint(255.0 * cdf / area), 0, 255)
    return maps


def _interp_tables(size, tiles):
    centers = np.array([(a + b - 1) / 2.0 for a, b in _tile_edges(size, tiles)])
    idx0 = np.empty(size, dtype=np.int64)
    idx1 = np.empty(size, dtype=np.int64)
    frac = np.empty(size, dtype=np.float32)
    for p in range(size):
        if p <= centers[0]:
            idx0[p] = idx1[p] = 0
            frac[p] = 0.0
        elif p >= centers[-1]:
            idx0[p] = idx1[p] = tiles - 1
            frac[p] = 0.0
        else:
            t = int(np.searchsorted(centers, p, side="right")) - 1
            idx0[p] = t
            idx1[p] = t + 1
            frac[p] = (p - centers[t]) / (centers[t + 1] - centers[t])
    return idx0, idx1, frac


@njit(cache=True)
def _clahe_blend_numba(levels, maps, ty0, ty1, fy, tx0, tx1, fx):
    h, w = levels.shape
    out = np.empty((h, w), dtype=np.float32)
    for y in range(h):
        a, b, wy = ty0[y], ty1[y], fy[y]
        for x in range(w):
            c, d, wx = tx0[x], tx1[x], fx[x]
            v = levels[y, x]
            top = maps[a, c, v] * (1.0 - wx) + maps[a, d, v] * wx
            bot = maps[b, c, v] * (1.0 - wx) + maps[b, d, v] * wx
            out[y, x] = top * (1.0 - wy) + bot * wy
    return out


def clahe_blend_numpy(levels, maps, ty0, ty1, fy, tx0, tx1, fx):
    v = levels
    g00 = maps[ty0[:, None], tx0[None, :], v]
    g01 = maps[ty0[:, None], tx1[None, :], v]
    g10 = maps[ty1[:, None], tx0[None, :], v]
    g11 = maps[ty1[:, None], tx1[None, :], v]
    fx = fx[None, :]
    fy = fy[:, None]
    top = g00 * (1 - fx) + g01 * fx
    bot = g10 * (1 - fx) + g11 * fx
    return top * (1 - fy) + bot * fy


def clahe_blend_numba(levels, maps, ty0, ty1, fy, tx0, tx1, fx):
    return _clahe_blend_numba(levels, maps, ty0, ty1, fy, tx0, tx1, fx)


clahe_blend = clahe_blend_numba if USE_NUMBA else clahe_blend_numpy


def clahe_equalize_plane(y_plane, tiles_y, tiles_x, clip_limit):
    """Clip-limited adaptive equalization of a float [0,255] luminance plane."""
    maps = clahe_tile_maps(y_plane, tiles_y, tiles_x, clip_limit)
    ty0, ty1, fy = _interp_tables(y_plane.shape[0], tiles_y)
    tx0, tx1, fx = _interp_tables(y_plane.shape[1], tiles_x)
    levels = np.clip(np.rint(y_plane), 0, 255).astype(np.int64)
    return clahe_blend(levels, maps, ty0, ty1, fy, tx0, tx1, fx)


def warmup():
    """Force JIT compilation of all numba kernels (no-op on the numpy path)."""
    x = np.random.default_rng(0).random((2, 6, 6)).astype(np.float32)
    w = np.random.default_rng(1).random((3, 2, 3, 3)).astype(np.float32) - 0.5
    y, cols, xps = conv2d_forward(x, w, 1, 1)
    conv2d_backward(np.ones_like(y), cols, xps, x.shape, w, 1, 1)
    img = (np.random.default_rng(2).random((8, 8, 3)) * 255).astype(np.uint8)
    bilinear_resize(img, 4, 4)
    clahe_equalize_plane(img[:, :, 0].astype(np.float32), 2, 2, 2.0)
