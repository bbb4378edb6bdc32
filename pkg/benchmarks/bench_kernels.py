#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy reference.

Usage:
    python benchmarks/bench_kernels.py [--repeats 5]

The first numba call includes JIT compilation; a warmup run is excluded from
the timings.  Select the backend the package itself uses with MMCBM_KERNELS.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mmcbm.kernels import jit, reference


def _svm_problem(n=400, d=256, seed=0):
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    X = np.ascontiguousarray(rng.standard_normal((n, d)) * 0.8 + np.outer(y, direction))
    return X, y


def _pool_problem(n_records=64, tokens_per=8, d=256, seed=0):
    rng = np.random.default_rng(seed)
    offsets = np.arange(0, (n_records + 1) * tokens_per, tokens_per, dtype=np.int64)
    tokens = np.ascontiguousarray(rng.standard_normal((offsets[-1], d)))
    labels = rng.integers(0, 3, n_records).astype(np.int64)
    return (
        tokens, offsets, labels,
        rng.standard_normal(d), rng.standard_normal((d, d)),
        rng.standard_normal((3, d)), rng.standard_normal(3), np.ones(3),
    )


def _predictor_problem(n_records=512, n_concepts=103, seed=0):
    rng = np.random.default_rng(seed)
    return (
        np.ascontiguousarray(rng.uniform(-1, 1, (n_records, n_concepts))),
        rng.integers(0, 3, n_records).astype(np.int64),
        rng.standard_normal((n_concepts, 3)),
        np.ones(3),
    )


def _time(fn, args, repeats):
    fn(*args)  # warmup (includes JIT compile for the numba path)
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    svm = _svm_problem()
    pool = _pool_problem()
    pred = _predictor_problem()
    cases = [
        ("svm_train (400x256, 1000 epochs)",
         lambda impl: _time(impl.svm_train, (*svm, 1.0, 1000, 1e-6), args.repeats)),
        ("attention_pool (64 rec x 8 tok x 256)",
         lambda impl: _time(impl.attention_pool, (pool[0], pool[1], pool[3], pool[4]),
                            args.repeats)),
        ("baseline_loss_grads (64 rec)",
         lambda impl: _time(impl.baseline_loss_grads, pool, args.repeats)),
        ("predictor_loss_grad (512 x 103)",
         lambda impl: _time(impl.predictor_loss_grad, pred, args.repeats)),
    ]

    width = max(len(name) for name, _ in cases)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, runner in cases:
        t_np = runner(reference)
        t_nb = runner(jit)
        print(f"{name:<{width}}  {t_np * 1e3:>8.2f}ms  {t_nb * 1e3:>8.2f}ms  "
              f"{t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
