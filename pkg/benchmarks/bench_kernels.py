"""Compiled vs numpy kernels: raw kernel calls and one toy training step.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from rstan import kernels
from rstan.losses import cross_entropy, neg_pearson_loss
from rstan.networks import RSTAN, toy_preset
from rstan.tensor import backward


def _best(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(rng):
    # shapes taken from the toy rSTAN stem and first pool on a batch of four 64x28x28 clips
    xp = rng.normal(size=(4, 1, 66, 30, 30))
    stem = (3, 3, 3, 2, 2, 2, 32, 14, 14)
    cols = kernels.python_backend.im2col3d(xp, *stem)
    pp = rng.normal(size=(4, 8, 32, 16, 16))
    pool = (1, 3, 3, 1, 2, 2, 32, 7, 7)
    _, arg = kernels.python_backend.maxpool3d_forward(pp, *pool)
    g = rng.normal(size=(4, 8, 32, 7, 7))
    return {
        "im2col3d": lambda b: b.im2col3d(xp, *stem),
        "col2im3d": lambda b: b.col2im3d(cols, xp.shape, *stem),
        "maxpool3d_forward": lambda b: b.maxpool3d_forward(pp, *pool),
        "maxpool3d_backward": lambda b: b.maxpool3d_backward(g, arg, pp.shape, *pool[:6]),
    }


def train_step_case(rng):
    model = RSTAN(toy_preset(), seed=0)
    video = rng.uniform(0, 1, size=(4, 1, 64, 28, 28))
    pulse = rng.normal(size=(4, 64))
    labels = np.array([0, 1, 0, 1])

    def step():
        model.zero_grad()
        out = model(video)
        backward(cross_entropy(out.logits, labels) + 0.5 * neg_pearson_loss(out.rppg_pred, pulse))
    return step


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results as JSON")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy backend is available", file=sys.stderr)
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    results = {}
    for name, fn in cases.items():
        results[name] = {b: _best(lambda: fn(impl), args.repeat) for b, impl in backends.items()}
    step = train_step_case(rng)
    results["rstan_train_step"] = {}
    for b in backends:
        prev = kernels.use_backend(b)
        results["rstan_train_step"][b] = _best(step, max(1, args.repeat // 2))
        kernels.backend = prev

    print(f"{'case':22s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup")
    for name, row in results.items():
        speed = row["python"] / row["cython"] if "cython" in row else float("nan")
        print(f"{name:22s} " + " ".join(f"{row[b] * 1e3:10.2f}ms" for b in backends) + f"   {speed:6.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)
    return results


if __name__ == "__main__":
    main()
