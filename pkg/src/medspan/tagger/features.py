"""Hashed sub-word features: every token contributes four keys (lowercase
form, 3-char prefix, 3-char suffix, word shape), each hashed into a shared
embedding row table.  Token vectors are the sum of their rows, so the
table stays small regardless of vocabulary size.

Hashing is FNV-1a over UTF-8 bytes with a seed fold, fully deterministic
across runs and platforms (Python's built-in ``hash`` is salted and never
used here).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from medspan.textcore import Token

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF

FEATURE_KEYS = ("word", "prefix", "suffix", "shape")


def fnv1a(data: bytes, seed: int = 0) -> int:
    h = (_FNV_OFFSET ^ (seed * _FNV_PRIME)) & _MASK
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK
    return h


def word_shape(surface: str) -> str:
    """Character-class sketch: X/x/d for upper/lower/digit, punctuation kept
    literally, runs capped at four symbols."""
    out: list[str] = []
    run_char = ""
    run_len = 0
    for ch in surface:
        if ch.isupper():
            sym = "X"
        elif ch.islower():
            sym = "x"
        elif ch.isdigit():
            sym = "d"
        else:
            sym = ch
        if sym == run_char:
            run_len += 1
            if run_len > 4:
                continue
        else:
            run_char = sym
            run_len = 1
        out.append(sym)
    return "".join(out)


@dataclass
class FeatureHasher:
    """Maps token surfaces to four row indices in [0, table_size)."""

    table_size: int
    seed: int = 1
    _cache: dict[str, tuple[int, int, int, int]] = field(
        default_factory=dict, repr=False
    )

    def __post_init__(self) -> None:
        if self.table_size <= 0 or self.table_size & (self.table_size - 1):
            raise ValueError(f"table_size must be a power of two, got {self.table_size}")

    def keys(self, surface: str) -> tuple[str, str, str, str]:
        lower = surface.lower()
        return (lower, lower[:3], lower[-3:], word_shape(surface))

    def indices(self, surface: str) -> tuple[int, int, int, int]:
        cached = self._cache.get(surface)
        if cached is not None:
            return cached
        mask = self.table_size - 1
        idx = tuple(
            fnv1a(f"{tag}={value}".encode("utf-8"), self.seed) & mask
            for tag, value in zip(FEATURE_KEYS, self.keys(surface))
        )
        self._cache[surface] = idx
        return idx

    def index_array(self, tokens: Sequence[Token]) -> np.ndarray:
        """(n_tokens, 4) int64 array of row indices."""
        return np.array(
            [self.indices(t.surface) for t in tokens], dtype=np.int64
        ).reshape(len(tokens), 4)

    def config(self) -> dict:
        return {"table_size": self.table_size, "seed": self.seed}
