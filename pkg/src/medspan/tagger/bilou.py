"""BILOU tag scheme: span <-> tag-sequence codec and the transition
validity table used by constrained decoding.

Valid sequences: O, L-x and U-x may be followed by O, B-y or U-y; B-x and
I-x only by I-x or L-x of the same label; sequences start with O, B or U
and end with O, L or U.
"""
from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from medspan.annotstore import LABELS, EntitySpan, Label
from medspan.textcore import Token


class BilouError(ValueError):
    """Invalid tag sequence or span/token geometry."""


class TagScheme:
    """Tag inventory and transition tables for a label set."""

    def __init__(self, labels: Sequence[Label] = LABELS) -> None:
        self.labels = tuple(labels)
        self.tags: tuple[str, ...] = ("O",) + tuple(
            f"{prefix}-{label.value}" for label in self.labels for prefix in "BILU"
        )
        self.index = {tag: i for i, tag in enumerate(self.tags)}
        n = len(self.tags)
        self.start_ok = np.array([self._starts(t) for t in self.tags], dtype=bool)
        self.end_ok = np.array([self._ends(t) for t in self.tags], dtype=bool)
        self.transitions = np.zeros((n, n), dtype=bool)
        for i, prev in enumerate(self.tags):
            for j, nxt in enumerate(self.tags):
                self.transitions[i, j] = self._follows(prev, nxt)

    @staticmethod
    def _starts(tag: str) -> bool:
        return tag == "O" or tag[0] in "BU"

    @staticmethod
    def _ends(tag: str) -> bool:
        return tag == "O" or tag[0] in "LU"

    @staticmethod
    def _follows(prev: str, nxt: str) -> bool:
        if prev == "O" or prev[0] in "LU":
            return nxt == "O" or nxt[0] in "BU"
        # prev is B-x or I-x: continuation of the same entity only
        return nxt[0] in "IL" and nxt[2:] == prev[2:]

    def allowed(self, prev_index: int | None, is_last: bool) -> np.ndarray:
        """Boolean mask of tags permitted at this position."""
        mask = self.start_ok.copy() if prev_index is None else self.transitions[prev_index].copy()
        if is_last:
            mask &= self.end_ok
        return mask

    def validate(self, tag_indices: Sequence[int]) -> None:
        if len(tag_indices) == 0:
            return
        if not self.start_ok[tag_indices[0]]:
            raise BilouError(f"sequence may not start with {self.tags[tag_indices[0]]}")
        for a, b in zip(tag_indices, tag_indices[1:]):
            if not self.transitions[a, b]:
                raise BilouError(
                    f"invalid transition {self.tags[a]} -> {self.tags[b]}"
                )
        if not self.end_ok[tag_indices[-1]]:
            raise BilouError(f"sequence may not end with {self.tags[tag_indices[-1]]}")


def spans_to_tags(
    spans: Sequence[EntitySpan], tokens: Sequence[Token], scheme: TagScheme
) -> list[int]:
    """Encode non-overlapping spans as BILOU tag indices over the tokens.

    Span boundaries that fall inside a token are snapped outward to the
    token's boundaries with a warning.  Spans that overlap (before or
    after snapping) raise :class:`BilouError`.
    """
    tags = [scheme.index["O"]] * len(tokens)
    occupied = [False] * len(tokens)
    for span in sorted(spans, key=lambda s: (s.start, s.end)):
        first = next((i for i, t in enumerate(tokens) if t.end > span.start), None)
        last = None
        for i in range(len(tokens) - 1, -1, -1):
            if tokens[i].start < span.end:
                last = i
                break
        if first is None or last is None or first > last:
            raise BilouError(f"span ({span.start}, {span.end}) covers no token")
        if tokens[first].start != span.start or tokens[last].end != span.end:
            warnings.warn(
                f"span ({span.start}, {span.end}, {span.label}) snapped to token "
                f"boundaries ({tokens[first].start}, {tokens[last].end})",
                stacklevel=2,
            )
        if any(occupied[first : last + 1]):
            raise BilouError(f"overlapping spans at tokens {first}..{last}")
        for i in range(first, last + 1):
            occupied[i] = True
        name = span.label.value
        if first == last:
            tags[first] = scheme.index[f"U-{name}"]
        else:
            tags[first] = scheme.index[f"B-{name}"]
            for i in range(first + 1, last):
                tags[i] = scheme.index[f"I-{name}"]
            tags[last] = scheme.index[f"L-{name}"]
    return tags


def tags_to_spans(
    tag_indices: Sequence[int], tokens: Sequence[Token], scheme: TagScheme
) -> list[EntitySpan]:
    """Decode a valid BILOU sequence back into character spans.

    Rejects invalid transition sequences outright rather than repairing
    them; decoding of model output is already transition-constrained.
    """
    if len(tag_indices) != len(tokens):
        raise BilouError("tag/token length mismatch")
    scheme.validate(tag_indices)
    spans = []
    open_start: int | None = None
    for i, tag_idx in enumerate(tag_indices):
        tag = scheme.tags[tag_idx]
        if tag == "O":
            continue
        prefix, name = tag[0], tag[2:]
        if prefix == "U":
            spans.append(EntitySpan(tokens[i].start, tokens[i].end, Label(name)))
        elif prefix == "B":
            open_start = tokens[i].start
        elif prefix == "L":
            assert open_start is not None
            spans.append(EntitySpan(open_start, tokens[i].end, Label(name)))
            open_start = None
    return spans
