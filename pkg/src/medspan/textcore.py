"""Text ingestion, artefact cleaning with exact offset remapping, and
deterministic offset-preserving tokenization.

Cleaning deletes email addresses, URLs, HTML/XML tags and non-ASCII
characters, and replaces each tab/newline/carriage return with a single
space.  Every maximal run of deleted characters collapses to one space so
adjacent words never merge.  The returned :class:`OffsetMap` resolves every
cleaned offset back to the original text, which is what lets standoff
annotations survive cleaning.

All offsets are Unicode scalar-value positions (Python string indices),
never bytes.  Everything in this module is pure and safe to share across
threads.  See ``docs/formats.md`` for the coordinate conventions.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Sequence

if TYPE_CHECKING:
    from medspan.annotstore import EntitySpan


class SpanBoundsError(ValueError):
    """A span does not fit inside its source coordinate system."""


@dataclass(frozen=True)
class Document:
    """Immutable text with a unique id and free-form string metadata.

    ``meta`` conventionally carries a source domain tag (``domain``) and a
    split tag (``split``).
    """

    id: str
    text: str
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("document id must be non-empty")


@dataclass(frozen=True)
class Token:
    """One token: ordinal index plus half-open character offsets."""

    index: int
    start: int
    end: int
    surface: str

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise ValueError(f"empty token at {self.start}")
        if len(self.surface) != self.end - self.start:
            raise ValueError(f"surface length mismatch for token {self.index}")


class OffsetMap:
    """Total, monotone mapping between cleaned and original offsets.

    Internally one record per cleaned character: the original half-open
    range it stands for.  Kept and replaced characters map to a range of
    width one; the single space emitted for a run of deleted characters
    maps to the whole run.
    """

    __slots__ = ("_orig_start", "_orig_end", "_cleaned_at", "_deleted", "original_length")

    def __init__(
        self,
        orig_start: list[int],
        orig_end: list[int],
        cleaned_at: list[int],
        deleted: list[bool],
        original_length: int,
    ) -> None:
        self._orig_start = orig_start
        self._orig_end = orig_end
        self._cleaned_at = cleaned_at
        self._deleted = deleted
        self.original_length = original_length

    @classmethod
    def identity(cls, length: int) -> "OffsetMap":
        idx = list(range(length))
        return cls(idx, [i + 1 for i in idx], list(idx), [False] * length, length)

    @property
    def cleaned_length(self) -> int:
        return len(self._orig_start)

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        """(cleaned offset, original offset) anchors, one per cleaned char."""
        return tuple((i, o) for i, o in enumerate(self._orig_start))

    def is_deleted(self, original_offset: int) -> bool:
        return self._deleted[original_offset]

    def to_original(self, cleaned_offset: int) -> int:
        """Original offset for a cleaned position (end position allowed)."""
        if not 0 <= cleaned_offset <= self.cleaned_length:
            raise SpanBoundsError(f"cleaned offset {cleaned_offset} out of range")
        if cleaned_offset == self.cleaned_length:
            return self.original_length
        return self._orig_start[cleaned_offset]

    def to_original_end(self, cleaned_end: int) -> int:
        """Original exclusive end for a cleaned exclusive end."""
        if not 0 < cleaned_end <= self.cleaned_length:
            raise SpanBoundsError(f"cleaned end {cleaned_end} out of range")
        return self._orig_end[cleaned_end - 1]

    def to_cleaned(self, original_offset: int) -> int:
        """Cleaned offset covering an original position (end allowed).

        Deleted characters resolve to the space their run collapsed to.
        """
        if not 0 <= original_offset <= self.original_length:
            raise SpanBoundsError(f"original offset {original_offset} out of range")
        if original_offset == self.original_length:
            return self.cleaned_length
        return self._cleaned_at[original_offset]


_EMAIL_RE = re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)+")
_URL_RE = re.compile(r"(?:https?://|www\.)[^\s<>]+", re.IGNORECASE)
_TAG_RE = re.compile(r"</?[A-Za-z][^<>]*>")
_ESCAPES = {"\t", "\n", "\r"}


def clean(raw: str) -> tuple[str, OffsetMap]:
    """Strip OCR-style artefacts and return the cleaned text plus its map.

    Deletions: emails, URLs, HTML/XML tags, non-ASCII characters.  Each
    maximal run of deleted characters becomes exactly one space.  Each tab,
    newline or carriage return is replaced by one space in place.  Empty
    input yields empty output with an identity map.  Idempotent: cleaning
    already-clean text is the identity.
    """
    if not raw:
        return "", OffsetMap.identity(0)

    deleted = [False] * len(raw)
    for pattern in (_TAG_RE, _URL_RE, _EMAIL_RE):
        for m in pattern.finditer(raw):
            for i in range(m.start(), m.end()):
                deleted[i] = True
    for i, ch in enumerate(raw):
        if ord(ch) > 127:
            deleted[i] = True

    out: list[str] = []
    orig_start: list[int] = []
    orig_end: list[int] = []
    cleaned_at = [0] * len(raw)
    i = 0
    n = len(raw)
    while i < n:
        if deleted[i]:
            run_start = i
            while i < n and deleted[i]:
                cleaned_at[i] = len(out)
                i += 1
            out.append(" ")
            orig_start.append(run_start)
            orig_end.append(i)
        else:
            cleaned_at[i] = len(out)
            out.append(" " if raw[i] in _ESCAPES else raw[i])
            orig_start.append(i)
            orig_end.append(i + 1)
            i += 1

    cleaned = "".join(out)
    return cleaned, OffsetMap(orig_start, orig_end, cleaned_at, deleted, n)


@dataclass(frozen=True)
class RemapResult:
    """Spans carried into the target coordinate system plus the drop report."""

    spans: tuple["EntitySpan", ...]
    dropped: tuple["EntitySpan", ...]


def remap_spans(
    spans: Sequence["EntitySpan"], offset_map: OffsetMap, direction: str
) -> RemapResult:
    """Carry spans across a cleaning boundary.

    ``direction`` is ``"to-cleaned"`` or ``"to-original"``.  Spans whose
    entire surface was deleted by cleaning are dropped and reported rather
    than mapped to the placeholder space.  Out-of-bounds spans raise
    :class:`SpanBoundsError` naming the offender.
    """
    if direction not in ("to-cleaned", "to-original"):
        raise ValueError(f"unknown direction {direction!r}")
    source_len = (
        offset_map.original_length if direction == "to-cleaned" else offset_map.cleaned_length
    )
    remapped = []
    dropped = []
    for span in spans:
        if not (0 <= span.start < span.end <= source_len):
            raise SpanBoundsError(
                f"span ({span.start}, {span.end}, {span.label}) out of bounds "
                f"for source of length {source_len}"
            )
        if direction == "to-cleaned":
            lo = span.start
            while lo < span.end and offset_map.is_deleted(lo):
                lo += 1
            if lo == span.end:
                dropped.append(span)
                continue
            hi = span.end - 1
            while offset_map.is_deleted(hi):
                hi -= 1
            new_start = offset_map.to_cleaned(lo)
            new_end = offset_map.to_cleaned(hi) + 1
        else:
            new_start = offset_map.to_original(span.start)
            new_end = offset_map.to_original_end(span.end)
        remapped.append(replace(span, start=new_start, end=new_end))
    return RemapResult(tuple(remapped), tuple(dropped))


# Token pattern, tried in order: dotted abbreviation (kept whole, e.g.
# "p.o.", "p.r.n."), alphabetic run, digit run, single other character.
# Whitespace separates tokens and is never part of one.
_TOKEN_RE = re.compile(
    r"(?:[A-Za-z]\.)+[A-Za-z]\.?(?![A-Za-z0-9])"
    r"|[A-Za-z]+"
    r"|[0-9]+"
    r"|[^A-Za-z0-9\s]"
)


def tokenize(text: str) -> tuple[Token, ...]:
    """Deterministic tokenization of cleaned text.

    Splits on whitespace, detaches punctuation into single-character
    tokens, and splits alphabetic/numeric boundaries ("25mg" -> "25",
    "mg").  Dotted abbreviations of alternating single letters and periods
    ("p.o.", "b.i.d.") stay single tokens.
    """
    return tuple(
        Token(i, m.start(), m.end(), m.group())
        for i, m in enumerate(_TOKEN_RE.finditer(text))
    )


def token_gaps(text: str, tokens: Iterable[Token]) -> list[str]:
    """Inter-token gap strings; with surfaces they reconstruct the input."""
    gaps = []
    pos = 0
    for tok in tokens:
        gaps.append(text[pos : tok.start])
        pos = tok.end
    gaps.append(text[pos:])
    return gaps
