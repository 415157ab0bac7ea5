"""Time each hot kernel in its numba and pure-numpy flavour.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--csv out.csv]

Both flavours are checked for agreement before timing.
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from corrnet import _kernels as K


def cases(g):
    x = g.normal(size=(64, 8, 32, 32))
    conv = dict(kh=5, kw=5, stride=1, oh=28, ow=28)
    cols = g.normal(size=(64 * 28 * 28, 8 * 25))
    y1, y2 = g.normal(size=(512, 256)), g.normal(size=(512, 256))
    _, am = K.numpy_impl.maxpool_forward(x, 3, 2, 15, 15)
    gp = g.normal(size=(64, 8, 15, 15))
    return {
        "im2col 64x8x32x32 k5": lambda impl: impl.im2col(x, **conv),
        "col2im 64x8x32x32 k5": lambda impl: impl.col2im(cols, 64, 8, 32, 32, 5, 5, 1, 28, 28),
        "maxpool fwd k3 s2": lambda impl: impl.maxpool_forward(x, 3, 2, 15, 15),
        "maxpool bwd k3 s2": lambda impl: impl.maxpool_backward(gp, am, 32, 32),
        "avgpool fwd k3 s2": lambda impl: impl.avgpool_forward(x, 3, 2, 15, 15),
        "avgpool bwd k3 s2": lambda impl: impl.avgpool_backward(gp, 3, 2, 32, 32),
        "corr grads 512x256": lambda impl: impl.corr_feature_grads(y1, y2, 1e-8),
    }


def _flat(out):
    return np.concatenate([np.ravel(o).astype(np.float64) for o in out]) if isinstance(out, tuple) else out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    if K.numba_impl is None:
        print("numba is not installed; nothing to compare")
        return 1

    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        a, b = _flat(fn(K.numpy_impl)), _flat(fn(K.numba_impl))  # also compiles
        if not np.allclose(a, b, rtol=1e-10, atol=1e-12):
            print(f"{name}: flavours disagree")
            return 1
        t_np = min(timeit.repeat(lambda: fn(K.numpy_impl), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: fn(K.numba_impl), number=1, repeat=args.repeat))
        rows.append((name, t_np * 1e3, t_nb * 1e3, t_np / t_nb))

    print(f"{'kernel':24s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, a, b, s in rows:
        print(f"{name:24s} {a:10.3f} {b:10.3f} {s:8.2f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kernel", "numpy_ms", "numba_ms", "speedup"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
