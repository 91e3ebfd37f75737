"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--rows 256] [--cols 64] [--repeat 200]

Prints one line per kernel, then the mean wall time of a training step
under each backend (each measured in a fresh interpreter, since the
backend is chosen at import).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from epass_lab import _kernels_py

try:
    from epass_lab import _kernels
except ImportError:
    _kernels = None

STEP_SNIPPET = """
import time
from epass_lab import data, kernels, model
from epass_lab.trainer import RunConfig, Trainer
ds = data.gen_two_moons(508, 0.05, 0)
lab, unl = data.split(ds, data.SplitSpec(4, 0))
tr = Trainer(model.NetworkSpec(2, 2, num_projectors=3), RunConfig(steps={steps}), lab, unl)
tr.run(steps=5)
t0 = time.perf_counter()
tr.run(steps={steps})
print(kernels.BACKEND, (time.perf_counter() - t0) / {steps})
"""


def cases(rows, cols, rng):
    x = rng.normal(size=(rows, cols))
    s = _kernels_py.softmax_rows(x, 0.1)
    y, norms = _kernels_py.l2_normalize_rows(x)
    g = rng.normal(size=(rows, cols))
    flat = rng.normal(size=rows * cols)
    conf = rng.random(rows * cols)
    correct = (rng.random(rows * cols) < 0.5).astype(float)
    return {
        "softmax_rows": lambda k: k.softmax_rows(x, 0.1),
        "softmax_rows_backward": lambda k: k.softmax_rows_backward(s, g, 0.1),
        "l2_normalize_rows": lambda k: k.l2_normalize_rows(x),
        "l2_normalize_rows_backward": lambda k: k.l2_normalize_rows_backward(y, norms, g),
        "cross_entropy_rows": lambda k: k.cross_entropy_rows(s, s, 1e-12),
        "cross_entropy_rows_backward": lambda k: k.cross_entropy_rows_backward(s, s, g[:, 0].copy(), 1e-12),
        "lerp_": lambda k: k.lerp_(flat.copy(), flat, 0.999),
        "bin_stats": lambda k: k.bin_stats(conf, correct, 10),
        "sgd_update_": lambda k: k.sgd_update_(flat.copy(), flat.copy(), flat, 0.03, 0.9, 5e-4),
    }


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=256)
    ap.add_argument("--cols", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--steps", type=int, default=50, help="training steps per backend")
    args = ap.parse_args(argv)

    if _kernels is None:
        print("compiled extension not built; only the numpy backend is available")
    print(f"{'kernel':30s} {'numpy us':>10s} {'cython us':>10s} {'speedup':>8s}")
    for name, call in cases(args.rows, args.cols, np.random.default_rng(0)).items():
        t_py = best_of(lambda: call(_kernels_py), args.repeat) * 1e6
        if _kernels is None:
            print(f"{name:30s} {t_py:10.2f}")
            continue
        t_cy = best_of(lambda: call(_kernels), args.repeat) * 1e6
        print(f"{name:30s} {t_py:10.2f} {t_cy:10.2f} {t_py / t_cy:7.2f}x")

    print()
    for pure in ("1", "0"):
        env = dict(os.environ, EPASS_LAB_PURE=pure)
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(steps=args.steps)],
                             env=env, capture_output=True, text=True, check=True).stdout.split()
        print(f"train step ({out[0]}): {float(out[1]) * 1e3:.2f} ms")


if __name__ == "__main__":
    main()
