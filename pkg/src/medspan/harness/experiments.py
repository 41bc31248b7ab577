"""Experiment recipes: the train-curve study and the domain-transfer
before/after study, each emitting a reproducible report.

Reports contain no timestamps or host-specific values: rerunning with the
stored config and seed at worker count 1 reproduces every table byte for
byte.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

import medspan
from medspan import nnet
from medspan.annotstore import LABELS, Corpus, Provenance
from medspan.evalkit import (
    ConfusionTable,
    EvalCounts,
    MetricsReport,
    align,
    confusion,
    render_metrics_table,
    score,
)
from medspan.tagger.bilou import spans_to_tags
from medspan.tagger.model import TaggerModel, TrainConfig, fine_tune, predict, train
from medspan.textcore import tokenize


@dataclass
class ExperimentReport:
    """Result tables plus everything needed to recompute them."""

    experiment: str
    config: dict
    fingerprint: dict
    data: dict = field(default_factory=dict)
    tables: dict[str, str] = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def save(self, out_dir: Path | str) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = {
            "experiment": self.experiment,
            "config": self.config,
            "fingerprint": self.fingerprint,
            "data": self.data,
            "notes": self.notes,
        }
        (out / "report.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        text = [f"# {self.experiment}", ""]
        for note in self.notes:
            text.append(f"note: {note}")
        for name, table in self.tables.items():
            text += ["", f"## {name}", "", table.rstrip("\n")]
        (out / "report.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
        for name, content in self.files.items():
            (out / name).write_text(content, encoding="utf-8")


def fingerprint(seed: int, worker_count: int = 1) -> dict:
    return {
        "seed": seed,
        "package_version": medspan.__version__,
        "worker_count": worker_count,
    }


@dataclass
class SplitEvaluation:
    counts: EvalCounts
    strict: MetricsReport
    lenient: MetricsReport
    table: ConfusionTable
    token_accuracy: float
    documents: int


def evaluate_split(model: TaggerModel, corpus: Corpus, split: str = "test") -> SplitEvaluation:
    """Span metrics, confusion table and token accuracy on one split."""
    counts = EvalCounts()
    table = ConfusionTable()
    correct_tokens = 0
    total_tokens = 0
    n_docs = 0
    for doc_id in corpus.doc_ids(split):
        gold = corpus.annotation_for(doc_id, Provenance.GOLD) or corpus.annotation_for(
            doc_id, Provenance.HUMAN
        )
        if gold is None:
            continue
        doc = corpus.documents[doc_id]
        pred, _confs = predict(model, doc)
        outcomes = align(gold, pred)
        counts.add(EvalCounts.from_outcomes(outcomes))
        table.add(confusion(outcomes))
        tokens = tokenize(doc.text)
        gold_tags = spans_to_tags(gold.spans, tokens, model.scheme)
        pred_tags, _ = model.decode(tokens)
        correct_tokens += sum(1 for g, p in zip(gold_tags, pred_tags) if g == p)
        total_tokens += len(tokens)
        n_docs += 1
    return SplitEvaluation(
        counts=counts,
        strict=score(counts, alpha=0, document_count=n_docs),
        lenient=score(counts, alpha=1, document_count=n_docs),
        table=table,
        token_accuracy=correct_tokens / total_tokens if total_tokens else 0.0,
        documents=n_docs,
    )


def _curve_table(rows: Sequence[tuple[str, float]], metric_name: str) -> str:
    """Three-column layout: Fraction | <metric> | Delta, baseline row 0%."""
    lines = [f"{'Fraction':>10} | {metric_name:>14} | {'Delta':>10}"]
    lines.append("-" * len(lines[0]))
    lines.append(f"{'0%':>10} | {0.0:>14.2f} | {'baseline':>10}")
    previous = 0.0
    for name, value in rows:
        delta = value - previous
        delta_str = f"{'+' if delta >= 0 else ''}{delta:.2f}"
        lines.append(f"{name:>10} | {value:>14.2f} | {delta_str:>10}")
        previous = value
    return "\n".join(lines) + "\n"


def train_curve(
    corpus: Corpus,
    fractions: Sequence[float],
    config: TrainConfig,
) -> ExperimentReport:
    """Nested-subset training study.

    Fractions must be ascending within (0, 1]; subsets are nested (a
    smaller fraction's documents are a prefix of the larger's), isolating
    the effect of data quantity.  Both lenient span micro-F1 and token
    accuracy are reported, each in its own fraction/metric/delta table.
    """
    if not fractions:
        raise ValueError("no fractions given")
    if list(fractions) != sorted(fractions):
        raise ValueError("fractions must be ascending")
    if fractions[0] <= 0.0 or fractions[-1] > 1.0:
        raise ValueError("fractions must lie in (0, 1]")
    train_ids = corpus.doc_ids("train")
    if not train_ids:
        raise ValueError("corpus has no train split")
    rng = nnet.make_rng(config.seed)
    order = list(train_ids)
    rng.shuffle(order)

    span_rows: list[tuple[str, float]] = []
    token_rows: list[tuple[str, float]] = []
    per_fraction = []
    subset_sizes = []
    subset_ids: dict[str, list[str]] = {}
    for fraction in fractions:
        n = round(fraction * len(order))
        if n < 1:
            raise ValueError(f"fraction {fraction} selects no documents")
        subset = set(order[:n])
        subset_sizes.append(n)
        subset_ids[f"{round(fraction * 100)}%"] = sorted(subset)
        shrunk = Corpus(
            corpus.documents,
            dict(corpus.annotations),
            {
                doc_id: part
                for doc_id, part in corpus.split.items()
                if part != "train" or doc_id in subset
            },
        )
        model, history = train(shrunk, config)
        evaluation = evaluate_split(model, corpus, "test")
        name = f"{round(fraction * 100)}%"
        span_rows.append((name, evaluation.lenient.micro.f1 * 100))
        token_rows.append((name, evaluation.token_accuracy * 100))
        per_fraction.append(
            {
                "fraction": fraction,
                "train_docs": n,
                "span_f1_lenient_micro": evaluation.lenient.micro.f1,
                "token_accuracy": evaluation.token_accuracy,
                "epochs_run": len(history),
            }
        )

    report = ExperimentReport(
        experiment="train-curve",
        config={"fractions": list(fractions), "train": asdict(config)},
        fingerprint=fingerprint(config.seed),
        data={
            "rows": per_fraction,
            "nested_subset_sizes": subset_sizes,
            "subset_doc_ids": subset_ids,
        },
        notes=[
            "subsets are nested: each larger fraction contains every smaller one",
            "metric definitions: span F1 is the lenient micro-averaged span "
            "F1; token accuracy is the fraction of tokens with the exact "
            "gold BILOU tag (both reported since either reading of "
            "'accuracy' is defensible)",
        ],
    )
    report.tables["span F1 (lenient micro, x100)"] = _curve_table(span_rows, "Span F1")
    report.tables["token accuracy (x100)"] = _curve_table(token_rows, "Token acc")
    return report


def _two_block_table(before: MetricsReport, after: MetricsReport) -> str:
    width = max(len(l.value) for l in LABELS) + 2
    head = (
        f"{'':<{width}}{'Before fine-tuning':^26} | {'After fine-tuning':^26}\n"
        f"{'':<{width}}{'P':>8}{'R':>9}{'F1':>9} | {'P':>8}{'R':>9}{'F1':>9}"
    )
    lines = [head]
    rows = [(l.value, before.per_label[l], after.per_label[l]) for l in LABELS]
    rows.append(("Average (micro)", before.micro, after.micro))
    rows.append(("Average (macro)", before.macro, after.macro))
    for name, b, a in rows:
        lines.append(
            f"{name:<{width}}"
            f"{b.precision:>8.3f}{b.recall:>9.3f}{b.f1:>9.3f} | "
            f"{a.precision:>8.3f}{a.recall:>9.3f}{a.f1:>9.3f}"
        )
    return "\n".join(lines) + "\n"


def transfer_study(
    source: Corpus,
    target: Corpus,
    config: TrainConfig,
    finetune_config: Optional[TrainConfig] = None,
) -> ExperimentReport:
    """Train on source, evaluate on target before and after fine-tuning.

    The same target test split is used for both evaluations; the report
    header records that.  Emits the two-block per-label lenient table and
    one confusion CSV per phase.
    """
    if not target.doc_ids("train"):
        raise ValueError("target corpus has no train split to fine-tune on")
    model, _history = train(source, config)
    source_eval = evaluate_split(model, source, "test")
    before = evaluate_split(model, target, "test")
    tuned, _ft_history = fine_tune(
        model, target, finetune_config if finetune_config is not None else config
    )
    after = evaluate_split(tuned, target, "test")

    report = ExperimentReport(
        experiment="transfer-study",
        config={
            "train": asdict(config),
            "finetune": asdict(finetune_config if finetune_config is not None else config),
        },
        fingerprint=fingerprint(config.seed),
        data={
            "source_test_f1_lenient_micro": source_eval.lenient.micro.f1,
            "before_f1_lenient_micro": before.lenient.micro.f1,
            "after_f1_lenient_micro": after.lenient.micro.f1,
            "target_test_documents": before.documents,
            "before_per_label": before.lenient.to_dict()["per_label"],
            "after_per_label": after.lenient.to_dict()["per_label"],
        },
        notes=[
            f"the same {before.documents}-document target test set is "
            "evaluated before and after fine-tuning",
            f"source-domain test F1 (lenient micro): "
            f"{source_eval.lenient.micro.f1:.4f}",
        ],
    )
    report.tables["target-domain per-label results (lenient)"] = _two_block_table(
        before.lenient, after.lenient
    )
    report.files["confusion_before.csv"] = before.table.to_csv()
    report.files["confusion_after.csv"] = after.table.to_csv()
    return report
