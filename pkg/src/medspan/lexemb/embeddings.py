"""Static word embeddings: skip-gram training with negative sampling and
similarity-based lexicon expansion.

Words are lowercased token surfaces.  Training is deterministic for a
fixed seed at worker count 1; the sampling stream is materialized with
numpy up front so both kernel backends consume identical inputs.
"""
from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from medspan.annotstore import Corpus
from medspan.lexemb import kernels
from medspan.textcore import tokenize


class VocabularyError(ValueError):
    """Corpus vocabulary too small to train on."""


@dataclass
class EmbeddingTable:
    """Word -> vector table with a fixed dimension and an OOV fallback.

    Lookups never fail: unknown words get the all-zero OOV vector.  Rows
    can optionally be unit-normalized in place (used for cloze targets).
    """

    dimension: int
    words: dict[str, int]
    vectors: np.ndarray
    min_count: int = 1
    unit_norm: bool = False
    _oov: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.vectors.shape != (len(self.words), self.dimension):
            raise ValueError("vector block does not match vocabulary and dimension")
        self._oov = np.zeros(self.dimension, dtype=self.vectors.dtype)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.words

    def __len__(self) -> int:
        return len(self.words)

    def lookup(self, word: str) -> np.ndarray:
        idx = self.words.get(word.lower())
        return self._oov if idx is None else self.vectors[idx]

    def normalized(self) -> "EmbeddingTable":
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return EmbeddingTable(
            self.dimension, dict(self.words), self.vectors / norms, self.min_count, True
        )

    def save(self, path: Path | str) -> None:
        """Text format: header "<dimension> <vocab size>", then one row per
        word with space-separated decimal components."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        order = sorted(self.words, key=self.words.__getitem__)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(f"{self.dimension} {len(self.words)}\n")
            for word in order:
                row = self.vectors[self.words[word]]
                handle.write(word + " " + " ".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "EmbeddingTable":
        with open(path, encoding="utf-8") as handle:
            header = handle.readline().split()
            if len(header) != 2:
                raise ValueError(f"{path}: bad embedding header")
            dim, size = int(header[0]), int(header[1])
            words: dict[str, int] = {}
            vectors = np.empty((size, dim), dtype=np.float64)
            for i in range(size):
                parts = handle.readline().rstrip("\n").split(" ")
                if len(parts) != dim + 1:
                    raise ValueError(f"{path}: row {i} has {len(parts) - 1} components")
                words[parts[0]] = i
                vectors[i] = [float(x) for x in parts[1:]]
        return cls(dim, words, vectors)


def _corpus_sentences(corpus: Corpus) -> list[list[str]]:
    sentences = []
    for doc_id in sorted(corpus.documents):
        tokens = tokenize(corpus.documents[doc_id].text)
        sentences.append([t.surface.lower() for t in tokens])
    return sentences


def train_static_embeddings(
    corpus: Corpus,
    dimension: int = 64,
    window: int = 2,
    negatives: int = 5,
    epochs: int = 5,
    seed: int = 0,
    min_count: int = 2,
    learning_rate: float = 0.025,
) -> tuple[EmbeddingTable, list[float]]:
    """Train skip-gram embeddings; returns the table and per-epoch losses."""
    if dimension < 8:
        raise ValueError("dimension must be at least 8")
    if not corpus.documents:
        raise VocabularyError("corpus has no documents")
    sentences = _corpus_sentences(corpus)
    freq = Counter(w for sent in sentences for w in sent)
    vocab_words = sorted(
        (w for w, c in freq.items() if c >= min_count), key=lambda w: (-freq[w], w)
    )
    if not vocab_words:
        raise VocabularyError("vocabulary is empty after the frequency cutoff")
    if len(vocab_words) < 2:
        raise VocabularyError("vocabulary too small for negative sampling")
    words = {w: i for i, w in enumerate(vocab_words)}

    rng = np.random.Generator(np.random.PCG64(seed))
    w_in = (rng.random((len(words), dimension)) - 0.5) / dimension
    w_out = np.zeros((len(words), dimension), dtype=np.float64)

    counts = np.array([freq[w] for w in vocab_words], dtype=np.float64)
    noise = counts**0.75
    noise /= noise.sum()
    noise_cdf = np.cumsum(noise)

    encoded = [
        np.array([words[w] for w in sent if w in words], dtype=np.int32)
        for sent in sentences
    ]
    pairs_c: list[int] = []
    pairs_o: list[int] = []
    for sent in encoded:
        n = len(sent)
        for i in range(n):
            for j in range(max(0, i - window), min(n, i + window + 1)):
                if i != j:
                    pairs_c.append(int(sent[i]))
                    pairs_o.append(int(sent[j]))
    if not pairs_c:
        raise VocabularyError("no co-occurrence pairs (documents too short)")
    base_centers = np.array(pairs_c, dtype=np.int32)
    base_contexts = np.array(pairs_o, dtype=np.int32)

    losses = []
    for _epoch in range(epochs):
        order = rng.permutation(len(base_centers))
        centers = np.ascontiguousarray(base_centers[order])
        contexts = np.ascontiguousarray(base_contexts[order])
        draws = rng.random((len(centers), negatives))
        negative_ids = np.searchsorted(noise_cdf, draws)
        np.clip(negative_ids, 0, len(words) - 1, out=negative_ids)
        negative_ids = np.ascontiguousarray(negative_ids.astype(np.int32))
        total = kernels.sgns_epoch(
            w_in, w_out, centers, contexts, negative_ids, learning_rate
        )
        losses.append(total / len(centers))
    table = EmbeddingTable(dimension, words, w_in, min_count=min_count)
    return table, losses


def expand_lexicon(
    table: EmbeddingTable,
    seeds: Sequence[str],
    k: int = 10,
    min_sim: float = 0.5,
) -> list[tuple[str, float]]:
    """Nearest-neighbor candidates for seed words, ranked by cosine.

    Out-of-vocabulary seeds are skipped with a warning; an all-OOV seed
    list is an error.  Seeds never appear in the result and candidates are
    deduplicated keeping their best score.
    """
    seed_words = [s.lower() for s in seeds]
    known = [s for s in seed_words if s in table.words]
    for s in seed_words:
        if s not in table.words:
            warnings.warn(f"seed {s!r} not in vocabulary; skipped", stacklevel=2)
    if not known:
        raise VocabularyError("all seeds are out of vocabulary")

    norms = np.linalg.norm(table.vectors, axis=1)
    norms[norms == 0.0] = 1.0
    unit = table.vectors / norms[:, None]
    order = sorted(table.words, key=table.words.__getitem__)
    exclude = set(seed_words)
    best: dict[str, float] = {}
    for s in known:
        sims = unit @ unit[table.words[s]]
        ranked = sorted(
            ((order[i], float(sims[i])) for i in range(len(order)) if order[i] not in exclude),
            key=lambda item: (-item[1], item[0]),
        )
        for word, sim in ranked[:k]:
            if sim >= min_sim and best.get(word, -2.0) < sim:
                best[word] = sim
    return sorted(best.items(), key=lambda item: (-item[1], item[0]))


def cosine(table: EmbeddingTable, a: str, b: str) -> float:
    va, vb = table.lookup(a), table.lookup(b)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(va, vb) / (na * nb))
