"""Shared numeric core for the context encoders and the tagger.

A stack of radius-1 window convolutions with tanh nonlinearity and
residual connections, operating on batches of token-vector sequences
shaped (batch, tokens, width).  Includes the loss heads (softmax
cross-entropy over tags, cosine distance against target vectors), global
gradient-norm clipping, plain SGD, and the binary container used to
serialize every model in the package.

All math is float64; containers store arrays as explicit little-endian
float32 (see docs/formats.md), so save -> load -> save is byte-stable.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

Params = dict[str, np.ndarray]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    scale = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-scale, scale, size=(fan_in, fan_out))


def init_conv_stack(rng: np.random.Generator, width: int, depth: int) -> Params:
    params: Params = {}
    for layer in range(depth):
        params[f"conv{layer}.w"] = init_linear(rng, 3 * width, width)
        params[f"conv{layer}.b"] = np.zeros(width)
    return params


def _window_concat(x: np.ndarray) -> np.ndarray:
    """(B, T, W) -> (B, T, 3W): each position with its two neighbors,
    zero-padded at the sequence edges."""
    b, t, w = x.shape
    padded = np.zeros((b, t + 2, w), dtype=x.dtype)
    padded[:, 1:-1] = x
    return np.concatenate((padded[:, :-2], padded[:, 1:-1], padded[:, 2:]), axis=2)


def conv_stack_forward(
    params: Params, depth: int, x: np.ndarray
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Forward pass; returns output and per-layer caches for backward."""
    caches = []
    h = x
    for layer in range(depth):
        c = _window_concat(h)
        a = np.tanh(c @ params[f"conv{layer}.w"] + params[f"conv{layer}.b"])
        caches.append((c, a))
        h = a + h
    return h, caches


def conv_stack_backward(
    params: Params,
    depth: int,
    caches: list[tuple[np.ndarray, np.ndarray]],
    d_out: np.ndarray,
) -> tuple[Params, np.ndarray]:
    """Backward pass; returns parameter gradients and the input gradient."""
    grads: Params = {}
    dh = d_out
    for layer in range(depth - 1, -1, -1):
        c, a = caches[layer]
        dz = dh * (1.0 - a * a)
        flat_c = c.reshape(-1, c.shape[-1])
        flat_dz = dz.reshape(-1, dz.shape[-1])
        grads[f"conv{layer}.w"] = flat_c.T @ flat_dz
        grads[f"conv{layer}.b"] = flat_dz.sum(axis=(0))
        dc = dz @ params[f"conv{layer}.w"].T
        b, t, w = a.shape
        dpad = np.zeros((b, t + 2, w))
        dpad[:, :-2] += dc[:, :, :w]
        dpad[:, 1:-1] += dc[:, :, w : 2 * w]
        dpad[:, 2:] += dc[:, :, 2 * w :]
        dh = dh + dpad[:, 1:-1]
    return grads, dh


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(
    logits: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over all positions; returns (loss, dlogits).

    ``logits`` is (N, K), ``targets`` (N,) int.  The gradient is already
    divided by N.
    """
    probs = softmax(logits)
    n = logits.shape[0]
    picked = probs[np.arange(n), targets]
    loss = float(-np.log(np.maximum(picked, 1e-12)).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n
    return loss, dlogits


def cosine_distance_loss(
    pred: np.ndarray, target_unit: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean of 1 - cosine(pred, target) over rows; returns (loss, dpred).

    Targets must be unit rows.  Per-row loss lies in [0, 2].
    """
    norms = np.linalg.norm(pred, axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-12)
    unit = pred / norms
    cos = (unit * target_unit).sum(axis=1)
    n = pred.shape[0]
    loss = float((1.0 - cos).mean())
    # d(1 - p.t/|p|)/dp = (cos * p/|p| - t) / |p|
    dpred = (cos[:, None] * unit - target_unit) / norms / n
    return loss, dpred


def clip_gradients(grads: Params, max_norm: float) -> float:
    """Scale all gradients in place to a global L2 norm cap; returns the
    pre-clip norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def sgd_step(params: Params, grads: Params, lr: float) -> None:
    for name, grad in grads.items():
        params[name] -= lr * grad


def accumulate(into: Params, grads: Params) -> None:
    for name, grad in grads.items():
        if name in into:
            into[name] += grad
        else:
            into[name] = grad.copy()


def dropout_mask(
    rng: np.random.Generator, shape: tuple[int, ...], rate: float
) -> np.ndarray:
    """Inverted-dropout mask (already scaled by 1/keep)."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(np.float64) / keep


_MAGIC = b"MSPN"
_VERSION = 1


def save_container(
    path: Path | str, kind: str, meta: Mapping, arrays: Mapping[str, np.ndarray]
) -> None:
    """Self-describing binary container: magic, JSON header, then raw
    little-endian float32 array payloads in header order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = []
    payloads = []
    for name in arrays:
        data = np.ascontiguousarray(arrays[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(data.shape), "dtype": "<f4"})
        payloads.append(data.tobytes())
    header = json.dumps(
        {"kind": kind, "meta": dict(meta), "arrays": manifest}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(_MAGIC)
        handle.write(struct.pack("<II", _VERSION, len(header)))
        handle.write(header)
        for blob in payloads:
            handle.write(blob)


def load_container(path: Path | str) -> tuple[str, dict, Params]:
    """Read a container; arrays come back as float64 for computation."""
    path = Path(path)
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a model container (bad magic {magic!r})")
        version, header_len = struct.unpack("<II", handle.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        header = json.loads(handle.read(header_len).decode("utf-8"))
        arrays: Params = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = handle.read(count * 4)
            arrays[entry["name"]] = (
                np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
            )
    return header["kind"], header["meta"], arrays


def container_header(path: Path | str) -> dict:
    """Header of a container without loading payloads (CLI `model inspect`)."""
    with open(path, "rb") as handle:
        if handle.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a model container")
        _version, header_len = struct.unpack("<II", handle.read(8))
        return json.loads(handle.read(header_len).decode("utf-8"))


def flatten_params(params: Params, order: Iterable[str] | None = None) -> np.ndarray:
    names = list(order) if order is not None else sorted(params)
    return np.concatenate([params[n].ravel() for n in names])
