"""Pure-Python skip-gram negative-sampling epoch.

Reference implementation and fallback for the compiled kernel in
``_sgns.pyx``.  Both follow the same update order: for each (center,
context) pair, the positive target then each presampled negative, with the
accumulated center-row update applied last.  Negatives equal to the
context word are skipped.  Scores are clamped to +-30 before the sigmoid.
"""
from __future__ import annotations

import math

import numpy as np

_CLAMP = 30.0


def _sigmoid(x: float) -> float:
    if x > _CLAMP:
        x = _CLAMP
    elif x < -_CLAMP:
        x = -_CLAMP
    return 1.0 / (1.0 + math.exp(-x))


def sgns_epoch(
    w_in: np.ndarray,
    w_out: np.ndarray,
    centers: np.ndarray,
    contexts: np.ndarray,
    negatives: np.ndarray,
    lr: float,
) -> float:
    """Run one epoch of in-place SGD updates; returns the summed loss."""
    total = 0.0
    n_pairs = centers.shape[0]
    k = negatives.shape[1]
    for t in range(n_pairs):
        c = centers[t]
        o = contexts[t]
        v = w_in[c]
        acc = np.zeros_like(v)
        u = w_out[o]
        f = float(np.dot(v, u))
        s = _sigmoid(f)
        total -= math.log(max(s, 1e-12))
        g = (1.0 - s) * lr
        acc += g * u
        u += g * v
        for j in range(k):
            neg = negatives[t, j]
            if neg == o:
                continue
            un = w_out[neg]
            f = float(np.dot(v, un))
            s = _sigmoid(f)
            total -= math.log(max(1.0 - s, 1e-12))
            g = -s * lr
            acc += g * un
            un += g * v
        v += acc
    return total
