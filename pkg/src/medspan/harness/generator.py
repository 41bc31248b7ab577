"""Synthetic prescription-note generator.

Stands in for the access-restricted clinical corpora: every document is
assembled from templated sentences whose entity slots are filled from
per-domain vocabularies, and every emitted entity's gold span is recorded
exactly.  Label proportions follow a quota (largest remainder over the
frequency profile), so per-label counts land within one instance of the
profile; Duration is deliberately rare.

The ``target`` domain differs from ``source`` by a documented filler
shift: UK-style frequency abbreviations (OD, BD, TDS, nocte, mane) and
dotted route abbreviations replace the spelled-out source vocabulary.
That is exactly the vocabulary gap the transfer experiment must expose.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from medspan import nnet
from medspan.annotstore import (
    LABELS,
    AnnotationSet,
    Corpus,
    EntitySpan,
    Label,
    Provenance,
    split_corpus,
)
from medspan.textcore import Document

# Mirrors the published entity distribution ordering: Drug most frequent,
# Duration rarest (~1.5% of entities).
DEFAULT_PROFILE: dict[Label, float] = {
    Label.DRUG: 0.35,
    Label.FORM: 0.145,
    Label.STRENGTH: 0.14,
    Label.FREQUENCY: 0.135,
    Label.ROUTE: 0.12,
    Label.DOSAGE: 0.095,
    Label.DURATION: 0.015,
}

_SHARED_DRUGS = [
    "aspirin", "warfarin", "metformin", "lisinopril", "atorvastatin",
    "ibuprofen", "amoxicillin", "omeprazole", "gabapentin", "furosemide",
    "prednisone", "metoprolol", "amlodipine", "simvastatin", "losartan",
    "sertraline", "levothyroxine", "insulin glargine", "clopidogrel",
    "pantoprazole", "azithromycin", "ciprofloxacin", "doxycycline",
    "tramadol", "oxycodone", "morphine", "paracetamol", "naproxen",
    "diazepam", "lorazepam", "citalopram", "fluoxetine", "venlafaxine",
    "quetiapine", "olanzapine", "risperidone", "digoxin", "ramipril",
    "bisoprolol", "senna",
]
_STRENGTH_NUMBERS = ["1", "2", "5", "10", "20", "25", "40", "50", "75", "81",
                     "100", "125", "200", "250", "325", "500", "850", "1000"]
_STRENGTH_DECIMALS = ["0.5", "1.25", "2.5", "7.5", "12.5"]
_STRENGTH_UNITS = ["mg", "mcg", "g", "ml", "units"]
_DURATION_NUMBERS = ["2", "3", "4", "5", "7", "10", "14"]
_DURATION_WORDS = ["two", "three", "five", "seven", "ten"]
_DURATION_UNITS = ["days", "weeks", "months"]

SOURCE_FILLERS: dict[Label, tuple[str, ...]] = {
    Label.DRUG: tuple(_SHARED_DRUGS),
    Label.DOSAGE: ("one", "two", "three", "four", "half", "one to two"),
    Label.FORM: ("tablet", "tablets", "capsule", "capsules", "patch",
                 "cream", "solution", "inhaler", "drops", "syrup"),
    Label.ROUTE: ("oral", "orally", "by mouth", "po", "intravenous", "iv",
                  "subcutaneous", "topical", "sublingual"),
    Label.FREQUENCY: ("daily", "twice daily", "three times daily", "once daily",
                      "every morning", "at bedtime", "as needed", "nightly",
                      "every 6 hours", "every 8 hours", "twice a day", "weekly"),
}
TARGET_FILLERS: dict[Label, tuple[str, ...]] = {
    Label.DRUG: tuple(_SHARED_DRUGS),
    Label.DOSAGE: ("one", "two", "three", "four", "half", "one to two"),
    Label.FORM: ("tablet", "tablets", "capsule", "capsules", "patch",
                 "cream", "solution", "inhaler", "drops", "syrup"),
    Label.ROUTE: ("p.o.", "i.v.", "s.c.", "im", "pr", "nasally"),
    Label.FREQUENCY: ("OD", "BD", "TDS", "QDS", "ON", "OM",
                      "nocte", "mane", "PRN", "alt die"),
}

_OPENERS = (
    "Started", "Continue", "Commenced", "Patient was started on", "Given",
    "Recommend", "Discharged on", "Restarted", "Will continue", "Now taking",
)
_NO_DRUG_OPENERS = (
    "Medication plan :", "Dose adjusted to", "Regimen changed to",
    "Prescription updated :", "Pharmacy to dispense",
)
_DISTRACTORS = (
    "Reviewed in clinic today .",
    "No adverse effects reported .",
    "Bloods repeated and stable .",
    "Past history includes hypertension .",
    "Monitor renal function closely .",
    "Family informed of the plan .",
    "Appetite and sleep both improved .",
    "Seen by the community team yesterday .",
)


@dataclass
class GeneratorSpec:
    """Everything the generator needs; fully determined by the seed."""

    domain: str = "source"
    seed: int = 0
    entities_per_doc: float = 3.0
    profile: dict[Label, float] = field(default_factory=lambda: dict(DEFAULT_PROFILE))
    fillers: Optional[dict[Label, tuple[str, ...]]] = None
    openers: tuple[str, ...] = _OPENERS
    no_drug_openers: tuple[str, ...] = _NO_DRUG_OPENERS
    distractors: tuple[str, ...] = _DISTRACTORS
    distractor_rate: float = 0.25

    def __post_init__(self) -> None:
        if self.domain not in ("source", "target"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.fillers is None:
            self.fillers = dict(
                SOURCE_FILLERS if self.domain == "source" else TARGET_FILLERS
            )
        if not self.openers or not self.no_drug_openers:
            raise ValueError("empty template set")
        if abs(sum(self.profile.values()) - 1.0) > 1e-9:
            raise ValueError("frequency profile must sum to 1")
        if self.entities_per_doc <= 0:
            raise ValueError("entities_per_doc must be positive")


def _quota(profile: Mapping[Label, float], total: int) -> dict[Label, int]:
    shares = {label: total * profile.get(label, 0.0) for label in LABELS}
    counts = {label: math.floor(shares[label]) for label in LABELS}
    leftover = total - sum(counts.values())
    order = sorted(LABELS, key=lambda l: (-(shares[l] - counts[l]), l.value))
    for label in order[:leftover]:
        counts[label] += 1
    return counts


def _pick(rng: np.random.Generator, options: Sequence[str]) -> str:
    return options[int(rng.integers(len(options)))]


def _make_filler(spec: GeneratorSpec, label: Label, rng: np.random.Generator) -> str:
    if label is Label.STRENGTH:
        if rng.random() < 0.2:
            return f"{_pick(rng, _STRENGTH_DECIMALS)} {_pick(rng, _STRENGTH_UNITS)}"
        return f"{_pick(rng, _STRENGTH_NUMBERS)} {_pick(rng, _STRENGTH_UNITS)}"
    if label is Label.DURATION:
        unit = _pick(rng, _DURATION_UNITS)
        roll = rng.random()
        if roll < 0.6:
            return f"for {_pick(rng, _DURATION_NUMBERS)} {unit}"
        if roll < 0.8:
            return f"{_pick(rng, _DURATION_NUMBERS)} {unit}"
        return f"for {_pick(rng, _DURATION_WORDS)} {unit}"
    return _pick(rng, spec.fillers[label])


_SLOT_ORDER = (
    Label.DRUG, Label.STRENGTH, Label.DOSAGE, Label.FORM,
    Label.ROUTE, Label.FREQUENCY, Label.DURATION,
)


def _render_sentence(
    spec: GeneratorSpec,
    labels: Sequence[Label],
    rng: np.random.Generator,
    offset: int,
) -> tuple[str, list[EntitySpan]]:
    """Render one sentence; returns its text and spans (absolute offsets)."""
    has_drug = Label.DRUG in labels
    opener = _pick(rng, spec.openers if has_drug else spec.no_drug_openers)
    pieces: list[tuple[str, Optional[Label]]] = [(opener, None)]
    for label in _SLOT_ORDER:
        if label in labels:
            pieces.append((_make_filler(spec, label, rng), label))
    if rng.random() < 0.3:
        pieces.append((_pick(rng, ("if tolerated", "as discussed", "per pharmacy",
                                   "and review")), None))
    pieces.append((".", None))

    parts: list[str] = []
    spans: list[EntitySpan] = []
    cursor = offset
    for i, (text, label) in enumerate(pieces):
        if i > 0:
            parts.append(" ")
            cursor += 1
        if label is not None:
            spans.append(EntitySpan(cursor, cursor + len(text), label))
        parts.append(text)
        cursor += len(text)
    return "".join(parts), spans


def generate(spec: GeneratorSpec, n_docs: int) -> Corpus:
    """Deterministic synthetic corpus with exact gold annotations."""
    if n_docs == 0:
        return Corpus({}, {}, {})
    rng = nnet.make_rng(spec.seed)
    total_entities = round(n_docs * spec.entities_per_doc)
    remaining = _quota(spec.profile, total_entities)

    # Sentence plans: consume the quota with one sentence at a time, a Drug
    # anchor whenever any remain plus up to three other distinct labels.
    plans: list[list[Label]] = []
    while sum(remaining.values()) > 0:
        labels: list[Label] = []
        if remaining[Label.DRUG] > 0:
            labels.append(Label.DRUG)
            remaining[Label.DRUG] -= 1
        others = [l for l in LABELS if l is not Label.DRUG and remaining[l] > 0]
        if others:
            weights = np.array([remaining[l] for l in others], dtype=np.float64)
            k = min(len(others), int(rng.integers(1, 4)))
            for _ in range(k):
                if not others:
                    break
                probs = weights / weights.sum()
                pick = int(rng.choice(len(others), p=probs))
                label = others.pop(pick)
                weights = np.delete(weights, pick)
                labels.append(label)
                remaining[label] -= 1
        if labels:
            plans.append(labels)
    order = rng.permutation(len(plans))
    plans = [plans[i] for i in order]

    # Pack plans into documents, spreading them across the whole corpus
    # (stochastic rounding of the remaining-plans / remaining-docs quota)
    # so entity sentences do not pile up in an early prefix of documents.
    documents: dict[str, Document] = {}
    annotations = {}
    cursor = 0
    doc_index = 0
    while doc_index < n_docs:
        remaining_plans = len(plans) - cursor
        remaining_docs = n_docs - doc_index
        quota = remaining_plans / remaining_docs
        per_doc = int(quota) + (1 if rng.random() < quota - int(quota) else 0)
        per_doc = min(per_doc, remaining_plans)
        sentence_plans = plans[cursor : cursor + per_doc]
        cursor += per_doc
        if doc_index == n_docs - 1 and cursor < len(plans):
            sentence_plans += plans[cursor:]
            cursor = len(plans)
        doc_id = f"{spec.domain}-{doc_index:04d}"
        text_parts: list[str] = []
        spans: list[EntitySpan] = []
        offset = 0
        for plan in sentence_plans:
            if rng.random() < spec.distractor_rate:
                distractor = _pick(rng, spec.distractors)
                text_parts.append(distractor)
                offset += len(distractor) + 1
            sentence, sentence_spans = _render_sentence(spec, plan, rng, offset)
            text_parts.append(sentence)
            spans.extend(sentence_spans)
            offset += len(sentence) + 1
        if not sentence_plans:
            distractor = _pick(rng, spec.distractors)
            text_parts.append(distractor)
        text = " ".join(text_parts)
        documents[doc_id] = Document(doc_id, text, {"domain": spec.domain})
        ann = AnnotationSet(doc_id, tuple(spans), Provenance.GOLD)
        annotations[ann.key] = ann
        doc_index += 1
    return Corpus(documents, annotations, {})


def generate_split(
    spec: GeneratorSpec,
    n_docs: int,
    fractions: Optional[Mapping[str, float]] = None,
) -> Corpus:
    """Generate and assign train/dev/test splits in one step."""
    corpus = generate(spec, n_docs)
    if fractions is None:
        fractions = {"train": 0.7, "dev": 0.1, "test": 0.2}
    if not corpus.documents:
        return corpus
    return split_corpus(corpus, fractions, spec.seed)
