"""Span-level evaluation: one-to-one alignment into COR/INC/PAR/MIS/SPU
outcomes, alpha-parameterized precision/recall/F1, confusion tables, and
inter-annotator agreement.

Alignment pairs exact-boundary overlaps first, then remaining spans by
largest character overlap (ties: earlier gold span, then earlier predicted
span).  A matched pair with exact boundaries scores COR when the labels
agree and INC otherwise; an inexact overlap scores PAR when the labels
agree and INC otherwise.  Unmatched gold spans are MIS, unmatched
predictions SPU.  Strict metrics use alpha=0, lenient alpha=1:

    precision = (COR + alpha * PAR) / (COR + INC + PAR + SPU)
    recall    = (COR + alpha * PAR) / (COR + INC + PAR + MIS)

Micro averages pool counts across labels; macro averages the per-label
metrics of every label that occurs.  All operations are pure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from medspan.annotstore import LABELS, AnnotationSet, EntitySpan, Label, spans_overlap

OUTCOME_KINDS = ("COR", "INC", "PAR", "MIS", "SPU")


class AlignmentError(ValueError):
    """Raised when a span set violates alignment preconditions."""


@dataclass(frozen=True)
class MatchOutcome:
    kind: str
    gold: Optional[EntitySpan] = None
    pred: Optional[EntitySpan] = None

    def __post_init__(self) -> None:
        if self.kind not in OUTCOME_KINDS:
            raise ValueError(f"unknown outcome kind {self.kind!r}")
        needs_gold = self.kind in ("COR", "INC", "PAR", "MIS")
        needs_pred = self.kind in ("COR", "INC", "PAR", "SPU")
        if needs_gold != (self.gold is not None) or needs_pred != (self.pred is not None):
            raise ValueError(f"outcome {self.kind} has wrong span references")


def _check_no_overlap(spans: Sequence[EntitySpan], side: str) -> None:
    ordered = sorted(spans, key=lambda s: (s.start, s.end))
    for prev, cur in zip(ordered, ordered[1:]):
        if spans_overlap(prev, cur):
            raise AlignmentError(f"overlapping {side} spans: {prev} / {cur}")


def _overlap_chars(a: EntitySpan, b: EntitySpan) -> int:
    return max(0, min(a.end, b.end) - max(a.start, b.start))


def align(gold: AnnotationSet, pred: AnnotationSet) -> list[MatchOutcome]:
    """One-to-one alignment of two span sets over the same document.

    Every gold and predicted span appears in exactly one outcome.  Pair
    preference: exact boundary match beats any partial overlap, larger
    character overlap beats smaller, then earlier gold span, then earlier
    predicted span.
    """
    return align_spans(gold.spans, pred.spans)


def align_spans(
    gold_spans: Sequence[EntitySpan], pred_spans: Sequence[EntitySpan]
) -> list[MatchOutcome]:
    _check_no_overlap(gold_spans, "gold")
    _check_no_overlap(pred_spans, "predicted")
    golds = sorted(gold_spans, key=lambda s: (s.start, s.end))
    preds = sorted(pred_spans, key=lambda s: (s.start, s.end))

    candidates = []
    for gi, g in enumerate(golds):
        for pi, p in enumerate(preds):
            ov = _overlap_chars(g, p)
            if ov > 0:
                exact = g.start == p.start and g.end == p.end
                candidates.append((1 if exact else 0, ov, -gi, -pi))
    candidates.sort(reverse=True)

    gold_used = [False] * len(golds)
    pred_used = [False] * len(preds)
    matched: list[tuple[int, int, bool]] = []
    for exact, _ov, neg_gi, neg_pi in candidates:
        gi, pi = -neg_gi, -neg_pi
        if gold_used[gi] or pred_used[pi]:
            continue
        gold_used[gi] = True
        pred_used[pi] = True
        matched.append((gi, pi, bool(exact)))

    outcomes = []
    for gi, pi, exact in sorted(matched):
        g, p = golds[gi], preds[pi]
        if exact:
            kind = "COR" if g.label is p.label else "INC"
        else:
            kind = "PAR" if g.label is p.label else "INC"
        outcomes.append(MatchOutcome(kind, gold=g, pred=p))
    for gi, g in enumerate(golds):
        if not gold_used[gi]:
            outcomes.append(MatchOutcome("MIS", gold=g))
    for pi, p in enumerate(preds):
        if not pred_used[pi]:
            outcomes.append(MatchOutcome("SPU", pred=p))
    return outcomes


@dataclass
class EvalCounts:
    """Per-label COR/INC/PAR/MIS/SPU tallies.

    INC is attributed to the gold label's row.  POS and ACT are always
    derived, never stored.
    """

    counts: dict[Label, dict[str, int]] = field(
        default_factory=lambda: {lab: {k: 0 for k in OUTCOME_KINDS} for lab in LABELS}
    )

    @classmethod
    def from_outcomes(cls, outcomes: Iterable[MatchOutcome]) -> "EvalCounts":
        ec = cls()
        for out in outcomes:
            label = out.gold.label if out.gold is not None else out.pred.label
            ec.counts[label][out.kind] += 1
        return ec

    def add(self, other: "EvalCounts") -> None:
        for label in LABELS:
            for kind in OUTCOME_KINDS:
                self.counts[label][kind] += other.counts[label][kind]

    def label_counts(self, label: Label) -> dict[str, int]:
        return dict(self.counts[label])

    def totals(self) -> dict[str, int]:
        return {
            kind: sum(self.counts[label][kind] for label in LABELS)
            for kind in OUTCOME_KINDS
        }

    @staticmethod
    def possible(c: Mapping[str, int]) -> int:
        return c["COR"] + c["INC"] + c["PAR"] + c["MIS"]

    @staticmethod
    def actual(c: Mapping[str, int]) -> int:
        return c["COR"] + c["INC"] + c["PAR"] + c["SPU"]


@dataclass(frozen=True)
class LabelMetrics:
    precision: float
    recall: float
    f1: float
    zero_denominator: bool


def _metrics(c: Mapping[str, int], alpha: int) -> LabelMetrics:
    pos = EvalCounts.possible(c)
    act = EvalCounts.actual(c)
    hit = c["COR"] + alpha * c["PAR"]
    flagged = pos == 0 or act == 0
    precision = hit / act if act else 0.0
    recall = hit / pos if pos else 0.0
    denom = precision + recall
    f1 = 2 * precision * recall / denom if denom else 0.0
    return LabelMetrics(precision, recall, f1, flagged)


@dataclass(frozen=True)
class MetricsReport:
    """Per-label and aggregate metrics for one alpha mode."""

    mode: str  # "strict" (alpha=0) or "lenient" (alpha=1)
    per_label: dict[Label, LabelMetrics]
    micro: LabelMetrics
    macro: LabelMetrics
    document_count: int
    counts: EvalCounts

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "document_count": self.document_count,
            "per_label": {
                label.value: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "zero_denominator": m.zero_denominator,
                    "counts": self.counts.label_counts(label),
                }
                for label, m in self.per_label.items()
            },
            "micro": {
                "precision": self.micro.precision,
                "recall": self.micro.recall,
                "f1": self.micro.f1,
            },
            "macro": {
                "precision": self.macro.precision,
                "recall": self.macro.recall,
                "f1": self.macro.f1,
            },
        }


def score(
    source: EvalCounts | Iterable[MatchOutcome],
    alpha: int,
    document_count: int = 1,
) -> MetricsReport:
    """Eq.-style metrics from outcomes or pre-summed counts.

    ``alpha`` must be exactly 0 (strict) or 1 (lenient); fractional values
    are rejected.  Zero denominators yield metric 0 with a flag.  Macro
    averages over the labels that occur (nonzero POS or ACT).
    """
    if alpha not in (0, 1) or isinstance(alpha, bool):
        raise ValueError(f"alpha must be 0 or 1, got {alpha!r}")
    alpha = int(alpha)
    counts = source if isinstance(source, EvalCounts) else EvalCounts.from_outcomes(source)
    per_label = {}
    active = []
    for label in LABELS:
        c = counts.counts[label]
        per_label[label] = _metrics(c, alpha)
        if EvalCounts.possible(c) or EvalCounts.actual(c):
            active.append(label)
    micro = _metrics(counts.totals(), alpha)
    if active:
        mp = sum(per_label[l].precision for l in active) / len(active)
        mr = sum(per_label[l].recall for l in active) / len(active)
        mf = sum(per_label[l].f1 for l in active) / len(active)
        macro = LabelMetrics(mp, mr, mf, any(per_label[l].zero_denominator for l in active))
    else:
        macro = LabelMetrics(0.0, 0.0, 0.0, True)
    return MetricsReport(
        mode="strict" if alpha == 0 else "lenient",
        per_label=per_label,
        micro=micro,
        macro=macro,
        document_count=document_count,
        counts=counts,
    )


@dataclass
class ConfusionTable:
    """Entity-count confusion grid in the report layout.

    The 7x7 grid holds COR (diagonal) and exact-boundary label confusions
    (off-diagonal).  Partial-boundary matches land in the gold label's
    Partial column regardless of the predicted label, so per-gold-label
    rows conserve: row sum + Missed + Partial == gold span count.
    Spurious predictions fill the final row under their predicted label.
    """

    grid: dict[Label, dict[Label, int]] = field(
        default_factory=lambda: {g: {p: 0 for p in LABELS} for g in LABELS}
    )
    missed: dict[Label, int] = field(default_factory=lambda: {l: 0 for l in LABELS})
    partial: dict[Label, int] = field(default_factory=lambda: {l: 0 for l in LABELS})
    spurious: dict[Label, int] = field(default_factory=lambda: {l: 0 for l in LABELS})

    def add(self, other: "ConfusionTable") -> None:
        for g in LABELS:
            for p in LABELS:
                self.grid[g][p] += other.grid[g][p]
            self.missed[g] += other.missed[g]
            self.partial[g] += other.partial[g]
            self.spurious[g] += other.spurious[g]

    def to_csv(self) -> str:
        header = [""] + [l.value for l in LABELS] + ["Missed", "Partial"]
        lines = [",".join(header)]
        for g in LABELS:
            row = [g.value] + [str(self.grid[g][p]) for p in LABELS]
            row += [str(self.missed[g]), str(self.partial[g])]
            lines.append(",".join(row))
        spurious = ["Spurious"] + [str(self.spurious[p]) for p in LABELS] + ["", ""]
        lines.append(",".join(spurious))
        return "\n".join(lines) + "\n"


def confusion(outcomes: Iterable[MatchOutcome]) -> ConfusionTable:
    """Build the confusion table and assert it reconciles with the counts."""
    outcomes = list(outcomes)
    table = ConfusionTable()
    for out in outcomes:
        if out.kind == "COR":
            table.grid[out.gold.label][out.pred.label] += 1
        elif out.kind == "INC":
            exact = out.gold.start == out.pred.start and out.gold.end == out.pred.end
            if exact:
                table.grid[out.gold.label][out.pred.label] += 1
            else:
                table.partial[out.gold.label] += 1
        elif out.kind == "PAR":
            table.partial[out.gold.label] += 1
        elif out.kind == "MIS":
            table.missed[out.gold.label] += 1
        else:
            table.spurious[out.pred.label] += 1
    counts = EvalCounts.from_outcomes(outcomes)
    for label in LABELS:
        row_total = (
            sum(table.grid[label].values()) + table.missed[label] + table.partial[label]
        )
        pos = EvalCounts.possible(counts.counts[label])
        if row_total != pos:
            raise AssertionError(
                f"confusion row for {label} does not reconcile: {row_total} != {pos}"
            )
        if table.grid[label][label] != counts.counts[label]["COR"]:
            raise AssertionError(f"diagonal mismatch for {label}")
        if table.spurious[label] != counts.counts[label]["SPU"]:
            raise AssertionError(f"spurious mismatch for {label}")
    return table


@dataclass(frozen=True)
class IaaResult:
    report: MetricsReport
    strict_report: MetricsReport
    table: ConfusionTable


def iaa(
    sets_a: Mapping[str, AnnotationSet], sets_b: Mapping[str, AnnotationSet]
) -> IaaResult:
    """Inter-annotator agreement over a shared document set.

    ``sets_a`` plays the gold role.  Both mappings must cover the same
    document ids.  Reports lenient (primary) plus strict metrics and the
    confusion table.
    """
    if set(sets_a) != set(sets_b):
        only_a = sorted(set(sets_a) - set(sets_b))
        only_b = sorted(set(sets_b) - set(sets_a))
        raise AlignmentError(
            f"document-id mismatch between annotators (only in a: {only_a}, only in b: {only_b})"
        )
    outcomes: list[MatchOutcome] = []
    for doc_id in sorted(sets_a):
        outcomes.extend(align(sets_a[doc_id], sets_b[doc_id]))
    n_docs = len(sets_a)
    return IaaResult(
        report=score(outcomes, alpha=1, document_count=n_docs),
        strict_report=score(outcomes, alpha=0, document_count=n_docs),
        table=confusion(outcomes),
    )


def render_metrics_table(strict: MetricsReport, lenient: MetricsReport) -> str:
    """Human-readable table: label rows x (Strict | Lenient) x P/R/F1."""
    width = max(len(l.value) for l in LABELS) + 2
    head = (
        f"{'':<{width}}" + f"{'Strict':^23} | " + f"{'Lenient':^23}\n"
        f"{'':<{width}}"
        f"{'P':>7}{'R':>8}{'F1':>8} | {'P':>7}{'R':>8}{'F1':>8}\n"
    )
    lines = [head.rstrip("\n")]
    rows: list[tuple[str, LabelMetrics, LabelMetrics]] = [
        (label.value, strict.per_label[label], lenient.per_label[label]) for label in LABELS
    ]
    rows.append(("Average (micro)", strict.micro, lenient.micro))
    rows.append(("Average (macro)", strict.macro, lenient.macro))
    for name, s, l in rows:
        lines.append(
            f"{name:<{width}}"
            f"{s.precision:>7.3f}{s.recall:>8.3f}{s.f1:>8.3f} | "
            f"{l.precision:>7.3f}{l.recall:>8.3f}{l.f1:>8.3f}"
        )
    return "\n".join(lines) + "\n"
