"""Standoff annotation model: the seven-label scheme, annotation sets with
provenance, corpus persistence and statistics.

File formats are newline-delimited JSON, one object per line, documented
bit-exactly in ``docs/formats.md``.  Documents and annotations live in
separate files; texts are never mutated after load.
"""
from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from medspan.textcore import Document, tokenize


class Label(str, Enum):
    """The seven medication categories, in report order."""

    DOSAGE = "Dosage"
    DRUG = "Drug"
    DURATION = "Duration"
    FORM = "Form"
    FREQUENCY = "Frequency"
    ROUTE = "Route"
    STRENGTH = "Strength"

    def __str__(self) -> str:  # serialized names match the report tables
        return self.value


LABELS: tuple[Label, ...] = tuple(Label)


class Provenance(str, Enum):
    GOLD = "gold"
    SILVER = "silver"
    MODEL = "model"
    HUMAN = "human"

    def __str__(self) -> str:
        return self.value


class CorpusError(ValueError):
    """Raised when corpus files fail to parse or validate."""


@dataclass(frozen=True, order=True)
class EntitySpan:
    """Half-open character span with a label, in the document's current
    coordinate system."""

    start: int
    end: int
    label: Label

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span boundaries ({self.start}, {self.end})")
        if not isinstance(self.label, Label):
            object.__setattr__(self, "label", Label(self.label))


def spans_overlap(a: EntitySpan, b: EntitySpan) -> bool:
    return a.start < b.end and b.start < a.end


@dataclass(frozen=True)
class AnnotationSet:
    """All spans one source asserted over one document.

    Spans are kept sorted by (start, end, label).  Exact duplicates are
    always rejected.  Overlaps are rejected except for silver sets, where
    several labelling functions may fire on the same string before
    conflict resolution.
    """

    doc_id: str
    spans: tuple[EntitySpan, ...]
    provenance: Provenance
    annotator_id: Optional[str] = None

    def __post_init__(self) -> None:
        if not isinstance(self.provenance, Provenance):
            object.__setattr__(self, "provenance", Provenance(self.provenance))
        ordered = tuple(sorted(self.spans, key=lambda s: (s.start, s.end, s.label.value)))
        object.__setattr__(self, "spans", ordered)
        seen = set()
        for span in ordered:
            key = (span.start, span.end, span.label)
            if key in seen:
                raise CorpusError(f"duplicate span {key} in annotations for {self.doc_id!r}")
            seen.add(key)
        if self.provenance is not Provenance.SILVER:
            for prev, cur in zip(ordered, ordered[1:]):
                if spans_overlap(prev, cur):
                    raise CorpusError(
                        f"overlapping spans {prev} / {cur} in {self.provenance} "
                        f"annotations for {self.doc_id!r}"
                    )

    @property
    def key(self) -> tuple[str, Provenance, Optional[str]]:
        return (self.doc_id, self.provenance, self.annotator_id)


SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class Corpus:
    """Documents, their annotation sets, and an optional split assignment."""

    documents: dict[str, Document]
    annotations: dict[tuple[str, Provenance, Optional[str]], AnnotationSet] = field(
        default_factory=dict
    )
    split: dict[str, str] = field(default_factory=dict)

    def validate(self) -> list[str]:
        """Return every invariant violation (empty list means valid)."""
        problems = []
        for key, ann in self.annotations.items():
            doc = self.documents.get(ann.doc_id)
            if doc is None:
                problems.append(f"annotation set {key} references unknown doc_id {ann.doc_id!r}")
                continue
            for span in ann.spans:
                if span.end > len(doc.text):
                    problems.append(
                        f"span ({span.start}, {span.end}, {span.label}) out of bounds "
                        f"for document {ann.doc_id!r} of length {len(doc.text)}"
                    )
        for doc_id, part in self.split.items():
            if doc_id not in self.documents:
                problems.append(f"split assigns unknown doc_id {doc_id!r}")
            if part not in SPLITS:
                problems.append(f"unknown split {part!r} for doc {doc_id!r}")
        return problems

    def doc_ids(self, split: Optional[str] = None) -> list[str]:
        ids = sorted(self.documents)
        if split is None:
            return ids
        return [i for i in ids if self.split.get(i) == split]

    def annotation_for(
        self, doc_id: str, provenance: Provenance, annotator_id: Optional[str] = None
    ) -> Optional[AnnotationSet]:
        return self.annotations.get((doc_id, Provenance(provenance), annotator_id))

    def sets_by_provenance(self, provenance: Provenance) -> list[AnnotationSet]:
        prov = Provenance(provenance)
        return [a for k, a in sorted(self.annotations.items()) if k[1] is prov]

    def with_annotations(self, sets: Iterable[AnnotationSet]) -> "Corpus":
        merged = dict(self.annotations)
        for ann in sets:
            if ann.doc_id not in self.documents:
                raise CorpusError(f"annotation references unknown doc_id {ann.doc_id!r}")
            merged[ann.key] = ann
        return Corpus(self.documents, merged, dict(self.split))

    def subset(self, doc_ids: Iterable[str]) -> "Corpus":
        keep = set(doc_ids)
        missing = keep - set(self.documents)
        if missing:
            raise CorpusError(f"unknown doc ids in subset: {sorted(missing)}")
        return Corpus(
            {i: d for i, d in self.documents.items() if i in keep},
            {k: a for k, a in self.annotations.items() if k[0] in keep},
            {i: s for i, s in self.split.items() if i in keep},
        )


def _parse_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected an object")
            yield lineno, obj


def load_documents(path: Path | str) -> dict[str, Document]:
    path = Path(path)
    documents: dict[str, Document] = {}
    for lineno, obj in _parse_jsonl(path):
        try:
            doc = Document(str(obj["id"]), obj["text"], dict(obj.get("meta") or {}))
        except (KeyError, ValueError, TypeError) as exc:
            raise CorpusError(f"{path}:{lineno}: bad document record ({exc})") from exc
        if doc.id in documents:
            raise CorpusError(f"{path}:{lineno}: duplicate document id {doc.id!r}")
        documents[doc.id] = doc
    return documents


def load_annotation_sets(path: Path | str) -> list[AnnotationSet]:
    path = Path(path)
    sets = []
    for lineno, obj in _parse_jsonl(path):
        try:
            spans = tuple(
                EntitySpan(int(s["start"]), int(s["end"]), Label(s["label"]))
                for s in obj["spans"]
            )
            sets.append(
                AnnotationSet(
                    doc_id=str(obj["doc_id"]),
                    spans=spans,
                    provenance=Provenance(obj["provenance"]),
                    annotator_id=obj.get("annotator_id"),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise CorpusError(f"{path}:{lineno}: bad annotation record ({exc})") from exc
    return sets


def load_corpus(doc_path: Path | str, ann_paths: Sequence[Path | str] = ()) -> Corpus:
    """Load documents plus annotation files; fail on any invariant violation."""
    documents = load_documents(doc_path)
    annotations: dict[tuple[str, Provenance, Optional[str]], AnnotationSet] = {}
    for ann_path in ann_paths:
        for ann in load_annotation_sets(ann_path):
            if ann.key in annotations:
                raise CorpusError(
                    f"{ann_path}: duplicate annotation set for {ann.key}"
                )
            annotations[ann.key] = ann
    split = {
        doc_id: doc.meta["split"]
        for doc_id, doc in documents.items()
        if doc.meta.get("split") in SPLITS
    }
    corpus = Corpus(documents, annotations, split)
    problems = corpus.validate()
    if problems:
        raise CorpusError("corpus validation failed:\n" + "\n".join(problems))
    return corpus


def save_corpus(corpus: Corpus, doc_path: Path | str, ann_path: Path | str) -> None:
    """Write documents and annotations in the ndjson formats, byte-stable.

    Split assignments are persisted in each document's ``meta.split``.
    """
    doc_path, ann_path = Path(doc_path), Path(ann_path)
    doc_path.parent.mkdir(parents=True, exist_ok=True)
    ann_path.parent.mkdir(parents=True, exist_ok=True)
    with open(doc_path, "w", encoding="utf-8") as handle:
        for doc_id in sorted(corpus.documents):
            doc = corpus.documents[doc_id]
            meta = dict(doc.meta)
            if doc_id in corpus.split:
                meta["split"] = corpus.split[doc_id]
            record = {"id": doc.id, "text": doc.text, "meta": meta}
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    with open(ann_path, "w", encoding="utf-8") as handle:
        for key in sorted(corpus.annotations, key=lambda k: (k[0], k[1].value, k[2] or "")):
            ann = corpus.annotations[key]
            record = {
                "doc_id": ann.doc_id,
                "spans": [
                    {"start": s.start, "end": s.end, "label": s.label.value}
                    for s in ann.spans
                ],
                "provenance": ann.provenance.value,
            }
            if ann.annotator_id is not None:
                record["annotator_id"] = ann.annotator_id
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


@dataclass(frozen=True)
class CorpusStats:
    """Document/word/span tallies.  All fields are additive over disjoint
    corpora except ``unique_words``, which is a union count (two parts can
    share vocabulary)."""

    documents: int
    total_words: int
    unique_words: int
    label_counts: dict[Label, int]


def corpus_stats(
    corpus: Corpus, provenance: Optional[Provenance] = None
) -> CorpusStats:
    """Document count, word counts, and per-label span counts.

    Unique words are counted over lowercased token surfaces.  When
    ``provenance`` is given only matching annotation sets contribute spans.
    """
    label_counts: Counter[Label] = Counter()
    for key, ann in corpus.annotations.items():
        if provenance is not None and key[1] is not Provenance(provenance):
            continue
        for span in ann.spans:
            label_counts[span.label] += 1
    total = 0
    vocab: set[str] = set()
    for doc_id in sorted(corpus.documents):
        tokens = tokenize(corpus.documents[doc_id].text)
        total += len(tokens)
        vocab.update(t.surface.lower() for t in tokens)
    return CorpusStats(
        documents=len(corpus.documents),
        total_words=total,
        unique_words=len(vocab),
        label_counts={label: label_counts.get(label, 0) for label in LABELS},
    )


def _allocate(n: int, fractions: Mapping[str, float]) -> dict[str, int]:
    """Largest-remainder allocation of n items to the split fractions."""
    shares = {part: n * fractions.get(part, 0.0) for part in SPLITS}
    counts = {part: math.floor(shares[part]) for part in SPLITS}
    leftover = n - sum(counts.values())
    by_remainder = sorted(SPLITS, key=lambda p: (-(shares[p] - counts[p]), SPLITS.index(p)))
    for part in by_remainder[:leftover]:
        counts[part] += 1
    return counts


def split_corpus(corpus: Corpus, fractions: Mapping[str, float], seed: int) -> Corpus:
    """Assign every document to train/dev/test, document-level and seeded.

    Fractions must cover only the known split names and sum to 1.
    Deterministic for a fixed seed; counts are rounded to the nearest
    achievable allocation (largest remainder).
    """
    unknown = set(fractions) - set(SPLITS)
    if unknown:
        raise ValueError(f"unknown split names: {sorted(unknown)}")
    total = sum(fractions.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"split fractions sum to {total}, expected 1")
    ids = sorted(corpus.documents)
    random.Random(seed).shuffle(ids)
    counts = _allocate(len(ids), fractions)
    split: dict[str, str] = {}
    cursor = 0
    for part in SPLITS:
        for doc_id in ids[cursor : cursor + counts[part]]:
            split[doc_id] = part
        cursor += counts[part]
    return Corpus(corpus.documents, dict(corpus.annotations), split)
