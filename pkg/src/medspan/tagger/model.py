"""The seven-label span tagger.

Architecture: summed hashed feature embeddings -> depth-stacked radius-1
window convolutions with residual connections and tanh -> per-token
softmax over BILOU tags, decoded greedily under the transition-validity
table.  Training mixes gold and silver examples per batch, applies
dropout to the summed token features, grows the batch size by a
compounding schedule, clips gradients at a global L2 norm of 5.0, and
early-stops on dev lenient micro-F1.

Deterministic for a fixed seed at worker count 1.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from medspan import nnet
from medspan.annotstore import (
    LABELS,
    AnnotationSet,
    Corpus,
    EntitySpan,
    Label,
    Provenance,
)
from medspan.evalkit import EvalCounts, align_spans, score
from medspan.tagger.bilou import TagScheme, spans_to_tags, tags_to_spans
from medspan.tagger.features import FeatureHasher
from medspan.textcore import Document, Token, tokenize


class TaggerConfigError(ValueError):
    """Incompatible architecture, label set, or training inputs."""


@dataclass
class TrainConfig:
    """Training hyperparameters; architecture fields apply only when no
    pretrained encoder is given."""

    epochs: int = 40
    batch_start: float = 4.0
    batch_growth: float = 1.001
    batch_cap: float = 32.0
    dropout: float = 0.2
    learning_rate: float = 0.05
    silver_ratio: float = 0.5  # fraction of each batch drawn from silver
    patience: int = 10
    seed: int = 0
    width: int = 96
    depth: int = 4
    table_size: int = 8192
    hash_seed: int = 1
    clip_norm: float = 5.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.silver_ratio <= 1.0:
            raise TaggerConfigError("silver_ratio must lie in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise TaggerConfigError("dropout must lie in [0, 1)")
        if self.batch_start < 1 or self.batch_cap < 1:
            raise TaggerConfigError("batch sizes must be >= 1")


class TaggerModel:
    """Weights plus the hasher and tag scheme needed to run them."""

    KIND = "tagger-model"

    def __init__(
        self,
        hasher: FeatureHasher,
        width: int,
        depth: int,
        params: nnet.Params,
        version: str = "v1",
        train_seed: int = 0,
    ) -> None:
        self.hasher = hasher
        self.width = width
        self.depth = depth
        self.params = params
        self.version = version
        self.train_seed = train_seed
        self.labels = LABELS
        self.scheme = TagScheme(LABELS)

    # -- construction -------------------------------------------------

    @classmethod
    def initialize(cls, config: TrainConfig) -> "TaggerModel":
        rng = nnet.make_rng(config.seed)
        hasher = FeatureHasher(config.table_size, config.hash_seed)
        params: nnet.Params = {
            "emb": rng.normal(0.0, 0.1, size=(config.table_size, config.width))
        }
        params.update(nnet.init_conv_stack(rng, config.width, config.depth))
        n_tags = 1 + 4 * len(LABELS)
        params["out.w"] = nnet.init_linear(rng, config.width, n_tags)
        params["out.b"] = np.zeros(n_tags)
        return cls(hasher, config.width, config.depth, params, train_seed=config.seed)

    @classmethod
    def from_encoder(cls, encoder, config: TrainConfig) -> "TaggerModel":
        """Initialize embeddings and convolution weights from a pretrained
        context encoder; the tag head starts fresh."""
        if encoder.width != config.width or encoder.depth != config.depth:
            raise TaggerConfigError(
                f"encoder width/depth ({encoder.width}/{encoder.depth}) does not "
                f"match config ({config.width}/{config.depth})"
            )
        if encoder.hasher.config() != {
            "table_size": config.table_size,
            "seed": config.hash_seed,
        }:
            raise TaggerConfigError("encoder feature hasher does not match config")
        model = cls.initialize(config)
        model.params["emb"] = encoder.params["emb"].copy()
        for layer in range(config.depth):
            model.params[f"conv{layer}.w"] = encoder.params[f"conv{layer}.w"].copy()
            model.params[f"conv{layer}.b"] = encoder.params[f"conv{layer}.b"].copy()
        return model

    def copy(self) -> "TaggerModel":
        clone = TaggerModel(
            FeatureHasher(self.hasher.table_size, self.hasher.seed),
            self.width,
            self.depth,
            {k: v.copy() for k, v in self.params.items()},
            version=self.version,
            train_seed=self.train_seed,
        )
        return clone

    # -- forward ------------------------------------------------------

    def featurize(self, tokens: Sequence[Token]) -> np.ndarray:
        """Per-token dense vectors: sum of the four hashed feature rows."""
        if not tokens:
            return np.zeros((0, self.width))
        idx = self.hasher.index_array(tokens)
        return self.params["emb"][idx].sum(axis=1)

    def _forward(self, idx: np.ndarray, feature_mask: Optional[np.ndarray] = None):
        x0 = self.params["emb"][idx].sum(axis=1)
        if feature_mask is not None:
            x0 = x0 * feature_mask
        h, caches = nnet.conv_stack_forward(self.params, self.depth, x0[None, :, :])
        logits = h[0] @ self.params["out.w"] + self.params["out.b"]
        return x0, h, caches, logits

    def logits(self, tokens: Sequence[Token]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, 1 + 4 * len(LABELS)))
        idx = self.hasher.index_array(tokens)
        return self._forward(idx)[3]

    # -- training -----------------------------------------------------

    def _example_grads(
        self,
        idx: np.ndarray,
        targets: np.ndarray,
        weight: float,
        feature_mask: Optional[np.ndarray],
    ):
        x0, h, caches, logits = self._forward(idx, feature_mask)
        loss, dlogits = nnet.softmax_xent(logits, targets)
        dlogits *= weight
        grads: nnet.Params = {
            "out.w": h[0].T @ dlogits,
            "out.b": dlogits.sum(axis=0),
        }
        dh = (dlogits @ self.params["out.w"].T)[None, :, :]
        conv_grads, dx = nnet.conv_stack_backward(self.params, self.depth, caches, dh)
        nnet.accumulate(grads, conv_grads)
        dx0 = dx[0]
        if feature_mask is not None:
            dx0 = dx0 * feature_mask
        return loss * weight, grads, idx.reshape(-1), np.repeat(dx0, 4, axis=0)

    def batch_step(
        self,
        examples: Sequence[tuple[np.ndarray, np.ndarray]],
        learning_rate: float,
        clip_norm: float,
        dropout: float = 0.0,
        rng: Optional[np.random.Generator] = None,
    ) -> float:
        """One SGD step over a batch of (feature index array, tag indices)."""
        total_tokens = sum(len(t) for _idx, t in examples)
        if total_tokens == 0:
            return 0.0
        dense: nnet.Params = {}
        emb_rows: list[np.ndarray] = []
        emb_grads: list[np.ndarray] = []
        loss_total = 0.0
        for idx, targets in examples:
            if len(targets) == 0:
                continue
            weight = len(targets) / total_tokens
            feature_mask = None
            if dropout > 0.0 and rng is not None:
                feature_mask = nnet.dropout_mask(rng, (len(targets), self.width), dropout)
            loss, grads, rows, row_grads = self._example_grads(
                idx, targets, weight, feature_mask
            )
            loss_total += loss
            nnet.accumulate(dense, grads)
            emb_rows.append(rows)
            emb_grads.append(row_grads)
        rows = np.concatenate(emb_rows)
        row_grads = np.concatenate(emb_grads)
        uniq, inverse = np.unique(rows, return_inverse=True)
        agg = np.zeros((len(uniq), self.width))
        np.add.at(agg, inverse, row_grads)
        # global-norm clip across dense grads and the sparse embedding grad
        sq = sum(float((g * g).sum()) for g in dense.values()) + float((agg * agg).sum())
        norm = float(np.sqrt(sq))
        scale = clip_norm / norm if norm > clip_norm > 0 else 1.0
        for name, grad in dense.items():
            self.params[name] -= learning_rate * scale * grad
        self.params["emb"][uniq] -= learning_rate * scale * agg
        return loss_total

    def dense_loss_and_grads(
        self, examples: Sequence[tuple[np.ndarray, np.ndarray]]
    ) -> tuple[float, nnet.Params]:
        """Full dense gradients (embedding table included); used by the
        finite-difference checks on miniature models."""
        total_tokens = sum(len(t) for _idx, t in examples)
        dense: nnet.Params = {"emb": np.zeros_like(self.params["emb"])}
        loss_total = 0.0
        for idx, targets in examples:
            loss, grads, rows, row_grads = self._example_grads(
                idx, targets, len(targets) / total_tokens, None
            )
            loss_total += loss
            nnet.accumulate(dense, grads)
            np.add.at(dense["emb"], rows, row_grads)
        return loss_total, dense

    # -- decoding -----------------------------------------------------

    def decode(self, tokens: Sequence[Token]) -> tuple[list[int], list[float]]:
        """Greedy transition-constrained decode; returns tag indices and
        the winning tag's softmax probability per token."""
        if not tokens:
            return [], []
        probs = nnet.softmax(self.logits(tokens))
        n = len(tokens)
        tags: list[int] = []
        confs: list[float] = []
        prev: Optional[int] = None
        for t in range(n):
            mask = self.scheme.allowed(prev, is_last=(t == n - 1))
            masked = np.where(mask, probs[t], -1.0)
            choice = int(np.argmax(masked))
            tags.append(choice)
            confs.append(float(probs[t, choice]))
            prev = choice
        return tags, confs

    # -- persistence --------------------------------------------------

    def save(self, path: Path | str) -> None:
        meta = {
            "model_version": self.version,
            "labels": [label.value for label in self.labels],
            "width": self.width,
            "depth": self.depth,
            "table_size": self.hasher.table_size,
            "hash_seed": self.hasher.seed,
            "train_seed": self.train_seed,
        }
        nnet.save_container(path, self.KIND, meta, self.params)

    @classmethod
    def load(cls, path: Path | str) -> "TaggerModel":
        kind, meta, arrays = nnet.load_container(path)
        if kind != cls.KIND:
            raise TaggerConfigError(f"{path}: expected {cls.KIND}, found {kind}")
        if meta["labels"] != [label.value for label in LABELS]:
            raise TaggerConfigError(f"{path}: label set mismatch {meta['labels']}")
        hasher = FeatureHasher(int(meta["table_size"]), int(meta["hash_seed"]))
        model = cls(
            hasher,
            int(meta["width"]),
            int(meta["depth"]),
            arrays,
            version=meta["model_version"],
            train_seed=int(meta["train_seed"]),
        )
        return model


def predict(
    model: TaggerModel, doc: Document
) -> tuple[AnnotationSet, tuple[float, ...]]:
    """Decode one document into model-provenance spans with confidences.

    Confidence of a span is the mean winning-tag probability over its
    tokens.  The two return values are index-aligned.
    """
    tokens = tokenize(doc.text)
    tags, confs = model.decode(tokens)
    if not tokens:
        return AnnotationSet(doc.id, (), Provenance.MODEL), ()
    spans = tags_to_spans(tags, tokens, model.scheme)
    token_of: dict[tuple[int, int], list[float]] = {}
    for span in spans:
        covered = [
            confs[i]
            for i, tok in enumerate(tokens)
            if tok.start >= span.start and tok.end <= span.end
        ]
        token_of[(span.start, span.end)] = covered
    ann = AnnotationSet(doc.id, tuple(spans), Provenance.MODEL)
    confidences = tuple(
        float(np.mean(token_of[(s.start, s.end)])) for s in ann.spans
    )
    return ann, confidences


@dataclass
class _ExamplePool:
    ids: list[str]
    examples: dict[str, tuple[np.ndarray, np.ndarray]]


def _build_pool(
    corpus: Corpus,
    doc_ids: Iterable[str],
    provenances: Sequence[Provenance],
    model: TaggerModel,
) -> _ExamplePool:
    ids = []
    examples = {}
    for doc_id in doc_ids:
        ann = None
        for prov in provenances:
            found = [
                a
                for k, a in corpus.annotations.items()
                if k[0] == doc_id and k[1] is prov
            ]
            if found:
                ann = found[0]
                break
        if ann is None:
            continue
        tokens = tokenize(corpus.documents[doc_id].text)
        if not tokens:
            continue
        tags = np.array(spans_to_tags(ann.spans, tokens, model.scheme), dtype=np.int64)
        idx = model.hasher.index_array(tokens)
        ids.append(doc_id)
        examples[doc_id] = (idx, tags)
    return _ExamplePool(ids, examples)


def dev_lenient_f1(model: TaggerModel, corpus: Corpus, split: str = "dev") -> float:
    counts = EvalCounts()
    n_docs = 0
    for doc_id in corpus.doc_ids(split):
        gold = corpus.annotation_for(doc_id, Provenance.GOLD) or corpus.annotation_for(
            doc_id, Provenance.HUMAN
        )
        if gold is None:
            continue
        pred, _confs = predict(model, corpus.documents[doc_id])
        counts.add(EvalCounts.from_outcomes(align_spans(gold.spans, pred.spans)))
        n_docs += 1
    if n_docs == 0:
        return 0.0
    return score(counts, alpha=1, document_count=n_docs).micro.f1


def _compounding(start: float, growth: float, cap: float):
    size = start
    while True:
        yield max(1, int(size))
        size = min(cap, size * growth)


def _train_loop(
    model: TaggerModel, corpus: Corpus, config: TrainConfig
) -> list[dict]:
    gold_pool = _build_pool(
        corpus, corpus.doc_ids("train"), (Provenance.GOLD, Provenance.HUMAN), model
    )
    if not gold_pool.ids:
        raise TaggerConfigError("train split has no gold documents")
    silver_pool = _build_pool(corpus, corpus.doc_ids("train"), (Provenance.SILVER,), model)

    rng = nnet.make_rng(config.seed)
    batch_sizes = _compounding(config.batch_start, config.batch_growth, config.batch_cap)
    history: list[dict] = []
    best_f1 = -1.0
    best_params: Optional[nnet.Params] = None
    stale = 0

    for epoch in range(config.epochs):
        order = list(gold_pool.ids)
        rng.shuffle(order)
        silver_order: list[str] = []
        epoch_losses = []
        cursor = 0
        while cursor < len(order):
            size = next(batch_sizes)
            n_silver = 0
            if config.silver_ratio > 0.0 and silver_pool.ids:
                n_silver = round(size * config.silver_ratio)
            n_gold = max(1, size - n_silver)
            batch = [gold_pool.examples[d] for d in order[cursor : cursor + n_gold]]
            cursor += n_gold
            for _ in range(n_silver):
                if not silver_order:
                    silver_order = list(silver_pool.ids)
                    rng.shuffle(silver_order)
                batch.append(silver_pool.examples[silver_order.pop()])
            loss = model.batch_step(
                batch,
                learning_rate=config.learning_rate,
                clip_norm=config.clip_norm,
                dropout=config.dropout,
                rng=rng,
            )
            epoch_losses.append(loss)
        f1 = dev_lenient_f1(model, corpus)
        history.append(
            {"epoch": epoch, "loss": float(np.mean(epoch_losses)), "dev_f1": f1}
        )
        if f1 > best_f1 + 1e-12:
            best_f1 = f1
            best_params = {k: v.copy() for k, v in model.params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if best_params is not None:
        model.params = best_params
    return history


def train(
    corpus: Corpus, config: TrainConfig, init=None
) -> tuple[TaggerModel, list[dict]]:
    """Train a tagger from scratch or from a pretrained context encoder.

    Batches mix gold and silver at ``config.silver_ratio``.  Returns the
    best-dev-F1 checkpoint and the per-epoch history.
    """
    model = (
        TaggerModel.from_encoder(init, config) if init is not None else TaggerModel.initialize(config)
    )
    model.train_seed = config.seed
    history = _train_loop(model, corpus, config)
    return model, history


def fine_tune(
    model: TaggerModel,
    corpus: Corpus,
    config: TrainConfig,
    guard_corpus: Optional[Corpus] = None,
    guard_tolerance: float = 0.05,
) -> tuple[TaggerModel, list[dict]]:
    """Continue training existing weights on a new corpus.

    The hasher and architecture are frozen; all weights remain trainable.
    A zero-epoch config returns an identical copy.  When ``guard_corpus``
    is given, its dev F1 is measured before and after; a drop beyond
    ``guard_tolerance`` emits a warning (the tuned model is still
    returned).
    """
    tuned = model.copy()
    tuned.version = _bump_version(model.version)
    if config.epochs == 0:
        return tuned, []
    guard_before = (
        dev_lenient_f1(model, guard_corpus) if guard_corpus is not None else None
    )
    history = _train_loop(tuned, corpus, config)
    if guard_corpus is not None:
        guard_after = dev_lenient_f1(tuned, guard_corpus)
        drop = guard_before - guard_after
        if drop > guard_tolerance:
            warnings.warn(
                f"fine-tuning regressed guard-corpus dev F1 by {drop:.4f} "
                f"(tolerance {guard_tolerance})",
                stacklevel=2,
            )
    return tuned, history


def _bump_version(version: str) -> str:
    if version.startswith("v") and version[1:].isdigit():
        return f"v{int(version[1:]) + 1}"
    return version + "+ft"
