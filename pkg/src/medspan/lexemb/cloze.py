"""Cloze-style self-supervised pretraining.

For every token position the encoder sees the surrounding context window
with the target token replaced by a learned MASK vector, and predicts the
target's static embedding; the loss is one minus the cosine between the
prediction and the (unit-normalized) target vector.  Windows are
independent, so positions train in parallel as a batch.

The encoder shares its feature hasher, embedding rows and convolution
stack with the tagger, which can load them as initialization.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from medspan import nnet
from medspan.annotstore import Corpus
from medspan.lexemb.embeddings import EmbeddingTable
from medspan.tagger.features import FeatureHasher
from medspan.textcore import tokenize

_PREFERRED_WIDTHS = (96, 128, 256)
_PREFERRED_DEPTHS = (4, 8, 16)


@dataclass
class PretrainConfig:
    width: int = 96
    depth: int = 4
    epochs: int = 50
    window: int = 4  # context radius in tokens
    seed: int = 0
    learning_rate: float = 0.05
    batch_size: int = 128
    table_size: int = 8192
    hash_seed: int = 1

    def __post_init__(self) -> None:
        if self.width not in _PREFERRED_WIDTHS:
            warnings.warn(
                f"width {self.width} is outside the benchmarked set {_PREFERRED_WIDTHS}",
                stacklevel=2,
            )
        if self.depth not in _PREFERRED_DEPTHS:
            warnings.warn(
                f"depth {self.depth} is outside the benchmarked set {_PREFERRED_DEPTHS}",
                stacklevel=2,
            )
        if self.window < 1:
            raise ValueError("window radius must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


class DimensionMismatchError(ValueError):
    """Encoder output dimension does not match the target table."""


class ContextEncoder:
    """Masked-window encoder with an output projection onto the static
    embedding space."""

    KIND = "context-encoder"

    def __init__(
        self,
        hasher: FeatureHasher,
        width: int,
        depth: int,
        dimension: int,
        window: int,
        params: nnet.Params,
        seed: int = 0,
    ) -> None:
        self.hasher = hasher
        self.width = width
        self.depth = depth
        self.dimension = dimension
        self.window = window
        self.params = params
        self.seed = seed

    @classmethod
    def initialize(cls, config: PretrainConfig, dimension: int) -> "ContextEncoder":
        rng = nnet.make_rng(config.seed)
        hasher = FeatureHasher(config.table_size, config.hash_seed)
        params: nnet.Params = {
            "emb": rng.normal(0.0, 0.1, size=(config.table_size, config.width)),
            "mask": rng.normal(0.0, 0.1, size=(config.width,)),
        }
        params.update(nnet.init_conv_stack(rng, config.width, config.depth))
        params["proj.w"] = nnet.init_linear(rng, config.width, dimension)
        params["proj.b"] = np.zeros(dimension)
        return cls(
            hasher, config.width, config.depth, dimension, config.window, params, config.seed
        )

    # -- forward/backward over a batch of masked windows ----------------

    def _gather(self, idx: np.ndarray) -> np.ndarray:
        """(B, T, 4) feature indices (-1 = pad) -> (B, T, width) vectors
        with the center position replaced by the MASK vector."""
        valid = idx >= 0
        safe = np.where(valid, idx, 0)
        x = (self.params["emb"][safe] * valid[..., None]).sum(axis=2)
        x[:, self.window, :] = self.params["mask"]
        return x

    def predict_vectors(self, idx: np.ndarray) -> np.ndarray:
        x = self._gather(idx)
        h, _caches = nnet.conv_stack_forward(self.params, self.depth, x)
        center = h[:, self.window, :]
        return center @ self.params["proj.w"] + self.params["proj.b"]

    def loss(self, idx: np.ndarray, targets_unit: np.ndarray) -> float:
        pred = self.predict_vectors(idx)
        value, _grad = nnet.cosine_distance_loss(pred, targets_unit)
        return value

    def loss_and_grads(
        self, idx: np.ndarray, targets_unit: np.ndarray
    ) -> tuple[float, nnet.Params, np.ndarray, np.ndarray]:
        """Returns (loss, dense grads, embedding row ids, row grads)."""
        x = self._gather(idx)
        h, caches = nnet.conv_stack_forward(self.params, self.depth, x)
        center = h[:, self.window, :]
        pred = center @ self.params["proj.w"] + self.params["proj.b"]
        loss, dpred = nnet.cosine_distance_loss(pred, targets_unit)
        grads: nnet.Params = {
            "proj.w": center.T @ dpred,
            "proj.b": dpred.sum(axis=0),
        }
        dh = np.zeros_like(h)
        dh[:, self.window, :] = dpred @ self.params["proj.w"].T
        conv_grads, dx = nnet.conv_stack_backward(self.params, self.depth, caches, dh)
        nnet.accumulate(grads, conv_grads)
        grads["mask"] = dx[:, self.window, :].sum(axis=0)
        dx[:, self.window, :] = 0.0  # center came from MASK, not the table
        valid = idx >= 0
        rows = idx[valid]
        row_grads = np.broadcast_to(dx[:, :, None, :], idx.shape + (self.width,))[valid]
        return loss, grads, rows, row_grads

    def dense_loss_and_grads(
        self, idx: np.ndarray, targets_unit: np.ndarray
    ) -> tuple[float, nnet.Params]:
        """Full dense gradients for finite-difference checks."""
        loss, grads, rows, row_grads = self.loss_and_grads(idx, targets_unit)
        grads["emb"] = np.zeros_like(self.params["emb"])
        np.add.at(grads["emb"], rows, row_grads)
        return loss, grads

    def step(
        self, idx: np.ndarray, targets_unit: np.ndarray, learning_rate: float
    ) -> float:
        loss, grads, rows, row_grads = self.loss_and_grads(idx, targets_unit)
        uniq, inverse = np.unique(rows, return_inverse=True)
        agg = np.zeros((len(uniq), self.width))
        np.add.at(agg, inverse, row_grads)
        for name, grad in grads.items():
            self.params[name] -= learning_rate * grad
        self.params["emb"][uniq] -= learning_rate * agg
        return loss

    # -- persistence ----------------------------------------------------

    def save(self, path: Path | str) -> None:
        meta = {
            "width": self.width,
            "depth": self.depth,
            "dimension": self.dimension,
            "window": self.window,
            "seed": self.seed,
            "table_size": self.hasher.table_size,
            "hash_seed": self.hasher.seed,
        }
        nnet.save_container(path, self.KIND, meta, self.params)

    @classmethod
    def load(cls, path: Path | str) -> "ContextEncoder":
        kind, meta, arrays = nnet.load_container(path)
        if kind != cls.KIND:
            raise ValueError(f"{path}: expected {cls.KIND}, found {kind}")
        hasher = FeatureHasher(int(meta["table_size"]), int(meta["hash_seed"]))
        return cls(
            hasher,
            int(meta["width"]),
            int(meta["depth"]),
            int(meta["dimension"]),
            int(meta["window"]),
            arrays,
            seed=int(meta["seed"]),
        )


def _corpus_windows(
    corpus: Corpus, hasher: FeatureHasher, window: int, targets: EmbeddingTable
) -> tuple[np.ndarray, np.ndarray]:
    """All maskable positions as (windows, target vectors).

    Positions whose token is out of the target vocabulary are skipped;
    there is no vector to reconstruct for them.
    """
    width_t = 2 * window + 1
    all_idx: list[np.ndarray] = []
    all_targets: list[np.ndarray] = []
    for doc_id in sorted(corpus.documents):
        tokens = tokenize(corpus.documents[doc_id].text)
        if not tokens:
            continue
        token_idx = hasher.index_array(tokens)
        n = len(tokens)
        for i, tok in enumerate(tokens):
            word = tok.surface.lower()
            if word not in targets.words:
                continue
            win = np.full((width_t, 4), -1, dtype=np.int64)
            lo = max(0, i - window)
            hi = min(n, i + window + 1)
            win[lo - i + window : hi - i + window] = token_idx[lo:hi]
            all_idx.append(win)
            all_targets.append(targets.vectors[targets.words[word]])
    if not all_idx:
        raise ValueError("no trainable positions: target vocabulary never occurs")
    return np.stack(all_idx), np.stack(all_targets)


def pretrain_cloze(
    corpus: Corpus,
    targets: EmbeddingTable,
    config: PretrainConfig,
    encoder: Optional[ContextEncoder] = None,
) -> tuple[ContextEncoder, list[float]]:
    """Train the encoder; returns it plus the loss curve.

    The curve's first entry is the mean loss before any update (about 1.0
    at random initialization) followed by one mean training loss per
    epoch.  Deterministic for a fixed seed.  Passing ``encoder`` resumes
    training; its output dimension must match the target table.
    """
    if len(targets) == 0:
        raise ValueError("target embedding table is empty")
    unit_targets = targets.normalized()
    if encoder is None:
        encoder = ContextEncoder.initialize(config, targets.dimension)
    if encoder.dimension != targets.dimension:
        raise DimensionMismatchError(
            f"encoder dimension {encoder.dimension} != targets {targets.dimension}"
        )
    windows, target_vecs = _corpus_windows(
        corpus, encoder.hasher, config.window, unit_targets
    )
    rng = nnet.make_rng(config.seed + 1)
    n = len(windows)

    losses = [_mean_loss(encoder, windows, target_vecs, config.batch_size)]
    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            chunk = order[start : start + config.batch_size]
            loss = encoder.step(
                windows[chunk], target_vecs[chunk], config.learning_rate
            )
            _assert_finite(loss)
            epoch_loss += loss * len(chunk)
        losses.append(epoch_loss / n)
    return encoder, losses


def _mean_loss(
    encoder: ContextEncoder, windows: np.ndarray, targets: np.ndarray, batch_size: int
) -> float:
    total = 0.0
    for start in range(0, len(windows), batch_size):
        chunk = slice(start, start + batch_size)
        total += encoder.loss(windows[chunk], targets[chunk]) * len(windows[chunk])
    return total / len(windows)


def _assert_finite(loss: float) -> None:
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite cloze loss {loss}")


def save_loss_curve(path: Path | str, losses: Sequence[float]) -> None:
    """Two-column CSV: epoch index (0 = before training), mean loss."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("epoch,mean_loss\n")
        for epoch, value in enumerate(losses):
            handle.write(f"{epoch},{value!r}\n")
