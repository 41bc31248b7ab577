"""Benchmark: compiled vs pure-Python skip-gram kernel.

The per-pair update loop is the package's one genuinely scalar hot path;
everything else (window convolutions, tag scoring) is BLAS-bound numpy.
This script times one epoch of identical updates through every available
backend and reports the speedup.

Run:  python benchmarks/bench_sgns.py [--pairs 200000] [--dim 96]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from medspan.lexemb.kernels import BACKEND, available_backends


def bench(pairs: int, dim: int, vocab: int, negatives: int, repeats: int) -> None:
    rng = np.random.default_rng(0)
    centers = rng.integers(0, vocab, pairs).astype(np.int32)
    contexts = rng.integers(0, vocab, pairs).astype(np.int32)
    negative_ids = rng.integers(0, vocab, (pairs, negatives)).astype(np.int32)

    backends = available_backends()
    print(f"selected backend: {BACKEND}; available: {', '.join(backends)}")
    print(f"pairs={pairs} dim={dim} vocab={vocab} negatives={negatives}")
    timings: dict[str, float] = {}
    for name, kernel in backends.items():
        # fresh, identical weights per backend
        local = np.random.default_rng(42)
        w_in = (local.random((vocab, dim)) - 0.5) / dim
        w_out = np.zeros((vocab, dim))
        best = float("inf")
        loss = 0.0
        for _ in range(repeats):
            start = time.perf_counter()
            loss = kernel(w_in, w_out, centers, contexts, negative_ids, 0.025)
            best = min(best, time.perf_counter() - start)
        timings[name] = best
        rate = pairs / best
        print(f"  {name:>7}: {best:8.3f}s  ({rate:>12,.0f} pairs/s)  loss={loss / pairs:.4f}")
    if "cython" in timings and "python" in timings:
        print(f"  speedup: {timings['python'] / timings['cython']:.1f}x")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=100_000)
    parser.add_argument("--dim", type=int, default=96)
    parser.add_argument("--vocab", type=int, default=5_000)
    parser.add_argument("--negatives", type=int, default=5)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    bench(args.pairs, args.dim, args.vocab, args.negatives, args.repeats)
