"""Command-line front door.

Exit codes: 0 success, 1 validation failure (bad inputs, bad config,
failed file validation), 2 runtime error.  Every subcommand accepts
``--config``, ``--seed`` and ``--out`` where they apply; seeds given on
the command line override the config file.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Optional

import click

from medspan import __version__
from medspan.annotstore import (
    Corpus,
    CorpusError,
    Provenance,
    corpus_stats,
    load_annotation_sets,
    load_corpus,
    save_corpus,
    split_corpus,
)
from medspan.evalkit import (
    AlignmentError,
    ConfusionTable,
    EvalCounts,
    align,
    confusion,
    iaa as iaa_op,
    render_metrics_table,
    score,
)
from medspan.harness import config as cfgmod
from medspan.harness.experiments import (
    ExperimentReport,
    evaluate_split,
    fingerprint,
    train_curve,
    transfer_study,
)
from medspan.harness.generator import GeneratorSpec, generate
from medspan.harness.pipeline import StageError, full_pipeline, preprocess_corpus
from medspan.lexemb import (
    ContextEncoder,
    EmbeddingTable,
    PretrainConfig,
    VocabularyError,
    pretrain_cloze,
    save_loss_curve,
    train_static_embeddings,
)
from medspan.nnet import container_header
from medspan.silverlabel import RuleSyntaxError, build_silver_corpus, compile_ruleset
from medspan.tagger.bilou import BilouError
from medspan.tagger.model import (
    TaggerConfigError,
    TaggerModel,
    fine_tune as fine_tune_op,
    predict as predict_op,
    train as train_op,
)
from medspan.textcore import SpanBoundsError

VALIDATION_ERRORS = (
    CorpusError,
    RuleSyntaxError,
    TaggerConfigError,
    AlignmentError,
    BilouError,
    SpanBoundsError,
    VocabularyError,
    cfgmod.ConfigError,
    ValueError,
)


@click.group()
@click.version_option(__version__, prog_name="medspan")
def cli() -> None:
    """Medication span extraction toolkit."""


def _load_cfg(config_path: Optional[str]):
    return cfgmod.load_config(config_path)


def _corpus_from_dir(path: str) -> Corpus:
    base = Path(path)
    ann = base / "annotations.jsonl"
    return load_corpus(base / "documents.jsonl", [ann] if ann.exists() else [])


def _write_corpus_dir(corpus: Corpus, out: str) -> None:
    base = Path(out)
    save_corpus(corpus, base / "documents.jsonl", base / "annotations.jsonl")


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--annotations", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
def preprocess(in_path, annotations, out, config_path, seed) -> None:
    """Clean documents, remap annotations, and write the drop report."""
    corpus = load_corpus(in_path, [annotations] if annotations else [])
    out_dir = Path(out)
    cleaned = preprocess_corpus(corpus, out_dir / "drop_report.json")
    _write_corpus_dir(cleaned, out)
    click.echo(f"cleaned {len(cleaned.documents)} documents -> {out}")


@cli.command(name="generate")
@click.option("--out", required=True, type=click.Path())
@click.option("--docs", type=int, default=None, help="number of documents")
@click.option("--domain", type=click.Choice(["source", "target"]), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
def generate_cmd(out, docs, domain, config_path, seed) -> None:
    """Generate a synthetic gold-annotated corpus with splits."""
    cfg = cfgmod.section(_load_cfg(config_path), "generate")
    n_docs = docs if docs is not None else cfgmod.get_int(cfg, "docs", 250)
    the_domain = domain or cfg.get("domain", "source")
    the_seed = seed if seed is not None else cfgmod.get_int(cfg, "seed", 0)
    fractions = {
        "train": cfgmod.get_float(cfg, "train", 0.8),
        "dev": cfgmod.get_float(cfg, "dev", 0.1),
        "test": cfgmod.get_float(cfg, "test", 0.1),
    }
    corpus = generate(GeneratorSpec(domain=the_domain, seed=the_seed), n_docs)
    if corpus.documents:
        corpus = split_corpus(corpus, fractions, the_seed)
    _write_corpus_dir(corpus, out)
    stats = corpus_stats(corpus, Provenance.GOLD)
    click.echo(
        f"generated {stats.documents} documents, "
        f"{sum(stats.label_counts.values())} entities -> {out}"
    )


@cli.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--rules", default="starter", help="'starter' or a rule file path")
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
def silver(corpus_dir, rules, out, config_path, seed) -> None:
    """Apply weak-supervision rules; write silver annotations + report."""
    from importlib import resources

    rules_path = (
        Path(str(resources.files("medspan") / "rules" / "starter.rules"))
        if rules == "starter"
        else Path(rules)
    )
    ruleset = compile_ruleset(rules_path)
    corpus = _corpus_from_dir(corpus_dir)
    labeled, report = build_silver_corpus(ruleset, corpus)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    silver_only = Corpus(
        labeled.documents,
        {k: a for k, a in labeled.annotations.items() if k[1] is Provenance.SILVER},
        dict(labeled.split),
    )
    save_corpus(silver_only, out_dir / "documents.jsonl", out_dir / "silver.jsonl")
    (out_dir / "silver_report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(
        f"silver-labeled {report.documents} documents, "
        f"{sum(report.label_counts.values())} spans -> {out}"
    )


@cli.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--dimension", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
def embed(corpus_dir, out, dimension, epochs, config_path, seed) -> None:
    """Train static skip-gram embeddings; write the text-format table."""
    cfg = cfgmod.section(_load_cfg(config_path), "embed")
    corpus = _corpus_from_dir(corpus_dir)
    table, losses = train_static_embeddings(
        corpus,
        dimension=dimension if dimension is not None else cfgmod.get_int(cfg, "dimension", 64),
        window=cfgmod.get_int(cfg, "window", 2),
        negatives=cfgmod.get_int(cfg, "negatives", 5),
        epochs=epochs if epochs is not None else cfgmod.get_int(cfg, "epochs", 5),
        seed=seed if seed is not None else cfgmod.get_int(cfg, "seed", 0),
        min_count=cfgmod.get_int(cfg, "min_count", 2),
    )
    out_path = Path(out)
    table.save(out_path)
    save_loss_curve(out_path.with_suffix(".loss.csv"), losses)
    click.echo(f"trained {len(table)} vectors of dimension {table.dimension} -> {out}")


@cli.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--embeddings", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--width", type=int, default=None)
@click.option("--depth", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
def pretrain(corpus_dir, embeddings, out, width, depth, epochs, config_path, seed) -> None:
    """Cloze-pretrain a context encoder against static embedding targets."""
    cfg = cfgmod.section(_load_cfg(config_path), "pretrain")
    corpus = _corpus_from_dir(corpus_dir)
    table = EmbeddingTable.load(embeddings)
    config = PretrainConfig(
        width=width if width is not None else cfgmod.get_int(cfg, "width", 96),
        depth=depth if depth is not None else cfgmod.get_int(cfg, "depth", 4),
        epochs=epochs if epochs is not None else cfgmod.get_int(cfg, "epochs", 10),
        window=cfgmod.get_int(cfg, "window", 4),
        seed=seed if seed is not None else cfgmod.get_int(cfg, "seed", 0),
    )
    encoder, losses = pretrain_cloze(corpus, table, config)
    out_path = Path(out)
    encoder.save(out_path)
    save_loss_curve(out_path.with_suffix(".loss.csv"), losses)
    click.echo(
        f"pretrained encoder {config.width}x{config.depth}: "
        f"loss {losses[0]:.3f} -> {losses[-1]:.3f}, curve beside model"
    )


def _train_common(corpus_dir, config_path, seed, init=None, model_path=None):
    corpus = _corpus_from_dir(corpus_dir)
    cfg_all = _load_cfg(config_path)
    config = cfgmod.train_config_from(cfgmod.section(cfg_all, "train"), seed=seed)
    encoder = ContextEncoder.load(init) if init else None
    if encoder is not None:
        config.width = encoder.width
        config.depth = encoder.depth
        config.table_size = encoder.hasher.table_size
        config.hash_seed = encoder.hasher.seed
    if model_path is None:
        return train_op(corpus, config, init=encoder), config
    model = TaggerModel.load(model_path)
    return fine_tune_op(model, corpus, config), config


@cli.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--init", type=click.Path(exists=True), help="pretrained encoder")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=0)
def train(corpus_dir, out, init, config_path, seed) -> None:
    """Train the tagger on a corpus directory (gold + optional silver)."""
    (model, history), _config = _train_common(corpus_dir, config_path, seed, init=init)
    model.save(out)
    best = max((h["dev_f1"] for h in history), default=0.0)
    click.echo(f"trained {len(history)} epochs, best dev lenient micro-F1 {best:.4f} -> {out}")


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=0)
def finetune(model_path, corpus_dir, out, config_path, seed) -> None:
    """Continue training an existing model on a new corpus."""
    (model, history), _config = _train_common(
        corpus_dir, config_path, seed, model_path=model_path
    )
    model.save(out)
    best = max((h["dev_f1"] for h in history), default=0.0)
    click.echo(f"fine-tuned {len(history)} epochs, best dev F1 {best:.4f} -> {out}")


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--split", default=None, help="restrict to one split")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
def predict(model_path, corpus_dir, out, split, config_path, seed) -> None:
    """Run the tagger over documents; write model-provenance annotations."""
    model = TaggerModel.load(model_path)
    corpus = _corpus_from_dir(corpus_dir)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    n_spans = 0
    with open(out_path, "w", encoding="utf-8") as handle:
        for doc_id in corpus.doc_ids(split):
            ann, confs = predict_op(model, corpus.documents[doc_id])
            n_spans += len(ann.spans)
            record = {
                "doc_id": doc_id,
                "spans": [
                    {"start": s.start, "end": s.end, "label": s.label.value}
                    for s in ann.spans
                ],
                "provenance": "model",
                "confidences": list(confs),
                "model_version": model.version,
            }
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    click.echo(f"predicted {n_spans} spans -> {out}")


@cli.command()
@click.option("--gold", required=True, type=click.Path(exists=True))
@click.option("--pred", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
def evaluate(gold, pred, out, config_path, seed) -> None:
    """Score predictions against gold annotations; emit both alpha modes."""
    gold_sets = {a.doc_id: a for a in load_annotation_sets(gold)}
    pred_sets = {a.doc_id: a for a in load_annotation_sets(pred)}
    counts = EvalCounts()
    table_acc = ConfusionTable()
    for doc_id in sorted(gold_sets):
        outcomes = align(gold_sets[doc_id], pred_sets.get(doc_id) or _empty_like(gold_sets[doc_id]))
        counts.add(EvalCounts.from_outcomes(outcomes))
        table_acc.add(confusion(outcomes))
    strict = score(counts, alpha=0, document_count=len(gold_sets))
    lenient = score(counts, alpha=1, document_count=len(gold_sets))
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(
        json.dumps(
            {"strict": strict.to_dict(), "lenient": lenient.to_dict()},
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    text = render_metrics_table(strict, lenient)
    (out_dir / "metrics.txt").write_text(text, encoding="utf-8")
    (out_dir / "confusion.csv").write_text(table_acc.to_csv(), encoding="utf-8")
    click.echo(text)


def _empty_like(ann):
    from medspan.annotstore import AnnotationSet

    return AnnotationSet(ann.doc_id, (), Provenance.MODEL)


@cli.command()
@click.option("--a", "path_a", required=True, type=click.Path(exists=True))
@click.option("--b", "path_b", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
def iaa(path_a, path_b, out, config_path, seed) -> None:
    """Inter-annotator agreement between two annotation files."""
    sets_a = {a.doc_id: a for a in load_annotation_sets(path_a)}
    sets_b = {a.doc_id: a for a in load_annotation_sets(path_b)}
    result = iaa_op(sets_a, sets_b)
    text = render_metrics_table(result.strict_report, result.report)
    click.echo(text)
    click.echo(f"lenient micro F1: {result.report.micro.f1:.4f}")
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "iaa.json").write_text(
            json.dumps(result.report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        (out_dir / "iaa_confusion.csv").write_text(result.table.to_csv(), encoding="utf-8")


@cli.command(name="train-curve")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--fractions", default="0.25,0.5,0.75,1.0", show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=0)
def train_curve_cmd(corpus_dir, fractions, out, config_path, seed) -> None:
    """Nested-fraction training study in the fraction/metric/delta layout."""
    corpus = _corpus_from_dir(corpus_dir)
    fraction_values = [float(f) for f in fractions.split(",") if f.strip()]
    config = cfgmod.train_config_from(
        cfgmod.section(_load_cfg(config_path), "train"), seed=seed
    )
    report = train_curve(corpus, fraction_values, config)
    report.save(out)
    for name, table in report.tables.items():
        click.echo(f"## {name}\n{table}")


@cli.command()
@click.option("--source", "source_dir", required=True, type=click.Path(exists=True))
@click.option("--target", "target_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=0)
def transfer(source_dir, target_dir, out, config_path, seed) -> None:
    """Before/after fine-tuning study across two corpus directories."""
    source = _corpus_from_dir(source_dir)
    target = _corpus_from_dir(target_dir)
    config = cfgmod.train_config_from(
        cfgmod.section(_load_cfg(config_path), "train"), seed=seed
    )
    report = transfer_study(source, target, config)
    report.save(out)
    click.echo(report.tables["target-domain per-label results (lenient)"])
    click.echo(
        f"before F1 {report.data['before_f1_lenient_micro']:.4f} -> "
        f"after F1 {report.data['after_f1_lenient_micro']:.4f}"
    )


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="defaults to the packaged quickstart config")
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
def pipeline(config_path, out, seed) -> None:
    """Run the full recipe: corpus -> silver -> embed -> pretrain -> train
    -> evaluate, with content-addressed caching."""
    cfg_path = config_path or str(cfgmod.quickstart_path())
    cfg = cfgmod.load_config(cfg_path)
    report = full_pipeline(cfg, out, seed=seed)
    hits = sum(1 for s in report.data["stages"] if s["cache_hit"])
    click.echo(report.tables["test-set results"])
    click.echo(
        f"stages: {len(report.data['stages'])} ({hits} cache hits); report -> {out}"
    )


@cli.group()
def model() -> None:
    """Model file utilities."""


@model.command()
@click.argument("path", type=click.Path(exists=True))
def inspect(path) -> None:
    """Print a model container's header."""
    click.echo(json.dumps(container_header(path), indent=2, sort_keys=True))


@cli.command()
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--model", "model_path", type=click.Path(exists=True))
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8731, show_default=True)
@click.option("--token", default=None, help="static bearer token")
@click.option("--static", "static_dir", type=click.Path(exists=True),
              help="directory of built web client assets to host at /")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=0)
def serve(store_dir, model_path, corpus_dir, host, port, token, static_dir, config_path, seed) -> None:
    """Start the active-learning annotation server."""
    import uvicorn

    from medspan.alserver.service import build_app

    app = build_app(
        store_dir=store_dir,
        model_path=model_path,
        corpus_dir=corpus_dir,
        token=token,
        seed=seed,
        static_dir=static_dir,
    )
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main() -> None:
    try:
        cli.main(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except StageError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except VALIDATION_ERRORS as exc:
        click.echo(f"validation error: {exc}", err=True)
        sys.exit(1)
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
