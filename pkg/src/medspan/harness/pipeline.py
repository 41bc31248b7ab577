"""End-to-end pipeline with a content-addressed stage cache.

Stage order: preprocess/generate -> silver labeling -> static embeddings
-> cloze pretraining (optional) -> tagger training (gold+silver mix) ->
evaluation.  Every stage's outputs land in a cache directory keyed by a
hash of the stage name, its configuration, and its input keys, so
unchanged reruns are pure cache hits and any config change invalidates
exactly the downstream stages.  Writes are atomic (temp dir renamed into
place).
"""
from __future__ import annotations

import hashlib
import json
import shutil
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Optional

from medspan.annotstore import Corpus, Provenance, load_corpus, save_corpus, split_corpus
from medspan.harness import config as cfgmod
from medspan.harness.experiments import (
    ExperimentReport,
    evaluate_split,
    fingerprint,
)
from medspan.evalkit import render_metrics_table
from medspan.harness.generator import GeneratorSpec, generate
from medspan.lexemb import (
    EmbeddingTable,
    ContextEncoder,
    PretrainConfig,
    pretrain_cloze,
    save_loss_curve,
    train_static_embeddings,
)
from medspan.silverlabel import build_silver_corpus, compile_ruleset
from medspan.tagger.model import TaggerModel, train
from medspan.textcore import clean, remap_spans


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _key(stage: str, params: Mapping, inputs: tuple[str, ...]) -> str:
    blob = json.dumps(
        {"stage": stage, "params": dict(params), "inputs": list(inputs)},
        sort_keys=True,
    ).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class StageResult:
    name: str
    key: str
    directory: Path
    cache_hit: bool


class StageCache:
    def __init__(self, root: Path) -> None:
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)

    def run(
        self,
        stage: str,
        params: Mapping,
        inputs: tuple[str, ...],
        build: Callable[[Path], None],
    ) -> StageResult:
        key = _key(stage, params, inputs)
        target = self.root / f"{stage}-{key}"
        if (target / "MANIFEST.json").exists():
            return StageResult(stage, key, target, cache_hit=True)
        try:
            scratch = Path(
                tempfile.mkdtemp(prefix=f".{stage}-", dir=self.root)
            )
            build(scratch)
            (scratch / "MANIFEST.json").write_text(
                json.dumps(
                    {"stage": stage, "key": key, "params": dict(params)},
                    sort_keys=True,
                )
                + "\n",
                encoding="utf-8",
            )
            if target.exists():
                shutil.rmtree(target)
            scratch.rename(target)
        except Exception as exc:
            shutil.rmtree(scratch, ignore_errors=True)
            raise StageError(stage, exc) from exc
        return StageResult(stage, key, target, cache_hit=False)


def _rules_path(sec: Mapping[str, str]) -> Path:
    raw = sec.get("rules", "starter")
    if raw == "starter":
        return Path(str(resources.files("medspan") / "rules" / "starter.rules"))
    return Path(raw)


def full_pipeline(
    config: Mapping[str, Mapping[str, str]],
    out_dir: Path | str,
    seed: Optional[int] = None,
) -> ExperimentReport:
    """Run (or resume from cache) the whole recipe; returns the report.

    Any stage failure aborts with :class:`StageError` naming the stage.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(out / "cache")
    pipe_sec = cfgmod.section(config, "pipeline")
    the_seed = seed if seed is not None else cfgmod.get_int(pipe_sec, "seed", 42)
    stages: list[StageResult] = []
    notes: list[str] = []

    # -- corpus: generate or load (+ optional cleaning) -----------------
    gen_sec = cfgmod.section(config, "generate")
    corpus_params: dict = {"seed": the_seed}
    if cfgmod.get_bool(gen_sec, "enabled", "documents" not in pipe_sec):
        n_docs = cfgmod.get_int(gen_sec, "docs", 250)
        domain = gen_sec.get("domain", "source")
        fractions = {
            "train": cfgmod.get_float(gen_sec, "train", 0.8),
            "dev": cfgmod.get_float(gen_sec, "dev", 0.1),
            "test": cfgmod.get_float(gen_sec, "test", 0.1),
        }
        corpus_params.update({"docs": n_docs, "domain": domain, **fractions})

        def build_corpus(dir: Path) -> None:
            spec = GeneratorSpec(domain=domain, seed=the_seed)
            corpus = generate(spec, n_docs)
            corpus = split_corpus(corpus, fractions, the_seed)
            save_corpus(corpus, dir / "documents.jsonl", dir / "annotations.jsonl")

        stage = cache.run("generate", corpus_params, (), build_corpus)
    else:
        doc_path = Path(pipe_sec["documents"])
        ann_path = pipe_sec.get("annotations")
        do_clean = cfgmod.get_bool(pipe_sec, "clean", False)
        try:
            corpus_params.update(
                {
                    "documents": _file_key(doc_path),
                    "annotations": _file_key(Path(ann_path)) if ann_path else None,
                    "clean": do_clean,
                }
            )
        except OSError as exc:
            raise StageError("corpus", exc) from exc

        def build_corpus(dir: Path) -> None:
            corpus = load_corpus(doc_path, [Path(ann_path)] if ann_path else [])
            if do_clean:
                corpus = preprocess_corpus(corpus, dir / "drop_report.json")
            if not corpus.split:
                corpus = split_corpus(
                    corpus,
                    {"train": 0.8, "dev": 0.1, "test": 0.1},
                    the_seed,
                )
            save_corpus(corpus, dir / "documents.jsonl", dir / "annotations.jsonl")

        stage = cache.run("corpus", corpus_params, (), build_corpus)
    stages.append(stage)
    corpus_dir = stage.directory
    corpus = load_corpus(
        corpus_dir / "documents.jsonl", [corpus_dir / "annotations.jsonl"]
    )

    # -- silver labeling -------------------------------------------------
    silver_sec = cfgmod.section(config, "silver")
    silver_enabled = cfgmod.get_bool(silver_sec, "enabled", True)
    silver_path: Optional[Path] = None
    if silver_enabled:
        rules_path = _rules_path(silver_sec)
        try:
            params = {"rules": _file_key(rules_path)}
        except OSError as exc:
            raise StageError("silver", exc) from exc

        def build_silver(dir: Path) -> None:
            ruleset = compile_ruleset(rules_path)
            train_ids = [i for i in corpus.doc_ids("train")]
            labeled, report = build_silver_corpus(ruleset, corpus, train_ids)
            silver_only = Corpus(
                corpus.documents,
                {
                    k: a
                    for k, a in labeled.annotations.items()
                    if k[1] is Provenance.SILVER
                },
                dict(corpus.split),
            )
            save_corpus(silver_only, dir / "documents.jsonl", dir / "silver.jsonl")
            (dir / "silver_report.json").write_text(
                json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )

        stage = cache.run("silver", params, (stages[-1].key,), build_silver)
        stages.append(stage)
        silver_path = stage.directory / "silver.jsonl"
    else:
        notes.append("silver labeling disabled; training on gold only")

    # -- static embeddings + cloze pretraining ---------------------------
    pre_sec = cfgmod.section(config, "pretrain")
    pretrain_enabled = cfgmod.get_bool(pre_sec, "enabled", True)
    encoder_path: Optional[Path] = None
    if pretrain_enabled:
        emb_sec = cfgmod.section(config, "embed")
        emb_params = {
            "dimension": cfgmod.get_int(emb_sec, "dimension", 64),
            "window": cfgmod.get_int(emb_sec, "window", 2),
            "negatives": cfgmod.get_int(emb_sec, "negatives", 5),
            "epochs": cfgmod.get_int(emb_sec, "epochs", 5),
            "min_count": cfgmod.get_int(emb_sec, "min_count", 2),
            "seed": the_seed,
        }

        def build_embed(dir: Path) -> None:
            table, losses = train_static_embeddings(corpus, **emb_params)
            table.save(dir / "embeddings.vec")
            save_loss_curve(dir / "sgns_loss.csv", losses)

        stage = cache.run("embed", emb_params, (stages[0].key,), build_embed)
        stages.append(stage)
        table_path = stage.directory / "embeddings.vec"

        pre_params = {
            "width": cfgmod.get_int(pre_sec, "width", 96),
            "depth": cfgmod.get_int(pre_sec, "depth", 4),
            "epochs": cfgmod.get_int(pre_sec, "epochs", 10),
            "window": cfgmod.get_int(pre_sec, "window", 4),
            "seed": the_seed,
        }

        def build_pretrain(dir: Path) -> None:
            table = EmbeddingTable.load(table_path)
            encoder, losses = pretrain_cloze(
                corpus, table, PretrainConfig(**pre_params)
            )
            encoder.save(dir / "encoder.bin")
            save_loss_curve(dir / "cloze_loss.csv", losses)

        stage = cache.run(
            "pretrain", pre_params, (stages[0].key, stages[-1].key), build_pretrain
        )
        stages.append(stage)
        encoder_path = stage.directory / "encoder.bin"
    else:
        notes.append("pretraining disabled; tagger starts from random weights")

    # -- tagger training --------------------------------------------------
    train_sec = cfgmod.section(config, "train")
    train_config = cfgmod.train_config_from(train_sec, seed=the_seed)
    if encoder_path is not None:
        pre_params_now = {
            "width": cfgmod.get_int(pre_sec, "width", 96),
            "depth": cfgmod.get_int(pre_sec, "depth", 4),
        }
        train_config.width = pre_params_now["width"]
        train_config.depth = pre_params_now["depth"]
    train_params = {
        "config": json.loads(json.dumps(train_config.__dict__, sort_keys=True)),
        "with_silver": silver_path is not None,
        "with_encoder": encoder_path is not None,
    }

    def build_train(dir: Path) -> None:
        training_corpus = corpus
        if silver_path is not None:
            silver_corpus = load_corpus(corpus_dir / "documents.jsonl", [silver_path])
            training_corpus = corpus.with_annotations(
                silver_corpus.sets_by_provenance(Provenance.SILVER)
            )
        encoder = ContextEncoder.load(encoder_path) if encoder_path else None
        model, history = train(training_corpus, train_config, init=encoder)
        model.save(dir / "model.bin")
        (dir / "history.json").write_text(
            json.dumps(history, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    stage = cache.run(
        "train", train_params, tuple(s.key for s in stages), build_train
    )
    stages.append(stage)
    model_path = stage.directory / "model.bin"

    # -- evaluation --------------------------------------------------------
    def build_eval(dir: Path) -> None:
        model = TaggerModel.load(model_path)
        evaluation = evaluate_split(model, corpus, "test")
        (dir / "metrics.json").write_text(
            json.dumps(
                {
                    "strict": evaluation.strict.to_dict(),
                    "lenient": evaluation.lenient.to_dict(),
                    "token_accuracy": evaluation.token_accuracy,
                    "documents": evaluation.documents,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
        (dir / "metrics.txt").write_text(
            render_metrics_table(evaluation.strict, evaluation.lenient),
            encoding="utf-8",
        )
        (dir / "confusion.csv").write_text(evaluation.table.to_csv(), encoding="utf-8")

    stage = cache.run("evaluate", {}, tuple(s.key for s in stages), build_eval)
    stages.append(stage)

    metrics = json.loads((stage.directory / "metrics.json").read_text())
    report = ExperimentReport(
        experiment="pipeline",
        config={k: dict(v) for k, v in config.items()},
        fingerprint=fingerprint(the_seed),
        data={
            "stages": [
                {"name": s.name, "key": s.key, "cache_hit": s.cache_hit}
                for s in stages
            ],
            "metrics": metrics,
        },
        notes=notes,
    )
    report.tables["test-set results"] = (
        stage.directory / "metrics.txt"
    ).read_text()
    report.files["confusion.csv"] = (stage.directory / "confusion.csv").read_text()
    report.save(out)
    return report


def preprocess_corpus(corpus: Corpus, drop_report_path: Optional[Path] = None) -> Corpus:
    """Clean every document and remap its annotations; returns a new corpus.

    Cleaning is opt-in at the pipeline level because some corpora are
    born-digital and need no OCR repair.
    """
    documents = {}
    annotations = {}
    dropped_total = []
    for doc_id in corpus.doc_ids():
        doc = corpus.documents[doc_id]
        cleaned, omap = clean(doc.text)
        documents[doc_id] = type(doc)(doc.id, cleaned, dict(doc.meta))
        for key, ann in corpus.annotations.items():
            if key[0] != doc_id:
                continue
            result = remap_spans(ann.spans, omap, "to-cleaned")
            annotations[key] = type(ann)(
                ann.doc_id, result.spans, ann.provenance, ann.annotator_id
            )
            for span in result.dropped:
                dropped_total.append(
                    {
                        "doc_id": doc_id,
                        "start": span.start,
                        "end": span.end,
                        "label": span.label.value,
                        "provenance": ann.provenance.value,
                    }
                )
    if drop_report_path is not None:
        drop_report_path.parent.mkdir(parents=True, exist_ok=True)
        drop_report_path.write_text(
            json.dumps({"dropped_spans": dropped_total}, indent=2, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )
    return Corpus(documents, annotations, dict(corpus.split))


def _file_key(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()[:16]
