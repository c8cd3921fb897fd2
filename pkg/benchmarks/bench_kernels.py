"""Compare the numba kernels against the pure-numpy fallbacks.

Run: python benchmarks/bench_kernels.py [--repeat N]

Both convolution flavours share the BLAS matrix product; numba only owns the
im2col/col2im loops, so expect parity there. The per-pixel kernels (bilinear
resize, CLAHE blend) are where the JIT usually earns its keep.
"""

import argparse
import time

import numpy as np

from groundkit import kernels


def bench(fn, *args, repeat=50):
    fn(*args)  # warm (and JIT-compile)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1000.0


def run(repeat: int):
    rng = np.random.default_rng(0)
    rows = []

    # conv2d im2col/col2im at backbone-typical sizes
    for name, xs, ws, stride in [
        ("im2col 16ch 64px s2", (16, 66, 66), (32, 16, 3, 3), 2),
        ("im2col 64ch 16px s1", (64, 18, 18), (64, 64, 3, 3), 1),
    ]:
        xp = rng.random(xs, dtype=np.float32)
        cout, cin, kh, kw = ws
        out_h = (xs[1] - kh) // stride + 1
        out_w = (xs[2] - kw) // stride + 1
        a = bench(kernels.im2col_numba, xp, kh, kw, stride, out_h, out_w, repeat=repeat)
        b = bench(kernels.im2col_numpy, xp, kh, kw, stride, out_h, out_w, repeat=repeat)
        rows.append((name, a, b))

        dcols = rng.random((cin * kh * kw, out_h * out_w), dtype=np.float32)
        a = bench(kernels.col2im_numba, dcols, cin, kh, kw, stride, out_h, out_w, xs[1], xs[2], repeat=repeat)
        b = bench(kernels.col2im_numpy, dcols, cin, kh, kw, stride, out_h, out_w, xs[1], xs[2], repeat=repeat)
        rows.append((name.replace("im2col", "col2im"), a, b))

    img = (rng.random((480, 640, 3)) * 255).astype(np.uint8)
    a = bench(kernels.bilinear_resize_numba, img, 128, 128, repeat=repeat)
    b = bench(kernels.bilinear_resize_numpy, img, 128, 128, repeat=repeat)
    rows.append(("bilinear 640x480->128", a, b))

    y = (rng.random((480, 640)) * 255).astype(np.float32)
    maps = kernels.clahe_tile_maps(y, 8, 8, 2.0)
    ty = kernels._interp_tables(480, 8)
    tx = kernels._interp_tables(640, 8)
    levels = np.clip(np.rint(y), 0, 255).astype(np.int64)
    a = bench(kernels.clahe_blend_numba, levels, maps, *ty, *tx, repeat=repeat)
    b = bench(kernels.clahe_blend_numpy, levels, maps, *ty, *tx, repeat=repeat)
    rows.append(("clahe blend 640x480", a, b))

    print(f"{'kernel':26s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>9s}")
    for name, a, b in rows:
        print(f"{name:26s} {a:10.3f} {b:10.3f} {b / a:8.2f}x")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    run(ap.parse_args().repeat)
