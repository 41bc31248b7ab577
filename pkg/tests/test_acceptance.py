"""Acceptance suite: one test per release criterion, each printing a
PASS line with its measured numbers.  Run with

    pytest tests/test_acceptance.py -v -s

Everything here uses frozen seeds; reruns reproduce the same numbers at
worker count 1.  The suite needs only the installed package and its CLI;
the browser frontend is never touched.
"""
import json
import random
import subprocess
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from medspan.annotstore import (
    LABELS,
    EntitySpan,
    Label,
    Provenance,
    load_corpus,
    save_corpus,
)
from medspan.evalkit import EvalCounts, align_spans, score
from medspan.harness.experiments import train_curve, transfer_study
from medspan.harness.generator import GeneratorSpec, generate, generate_split
from medspan.lexemb import PretrainConfig, pretrain_cloze, train_static_embeddings
from medspan.silverlabel import apply_rules, build_silver_corpus, compile_ruleset
from medspan.tagger.bilou import TagScheme, spans_to_tags, tags_to_spans
from medspan.tagger.model import TaggerModel, TrainConfig, predict, train
from medspan.textcore import Document, clean, remap_spans, tokenize
from conftest import perturbed_copy, random_span_set
from oracles import (
    brute_force_outcomes,
    expected_remapped_surface,
    outcomes_to_multiset,
)

SCHEME = TagScheme(LABELS)


def _pass(name: str, detail: str = "") -> None:
    suffix = f" ({detail})" if detail else ""
    print(f"\n[ACCEPTANCE] {name}: PASS{suffix}")


def _evaluate_model(model, corpus, split="test"):
    counts = EvalCounts()
    for doc_id in corpus.doc_ids(split):
        gold = corpus.annotation_for(doc_id, Provenance.GOLD)
        pred, _ = predict(model, corpus.documents[doc_id])
        counts.add(EvalCounts.from_outcomes(align_spans(gold.spans, pred.spans)))
    return score(counts, alpha=1).micro.f1


def test_evaluator_matches_brute_force_oracle():
    """align/score vs exhaustive assignment enumeration, 1000 instances."""
    start = time.monotonic()
    rng = random.Random(20240601)
    for i in range(1000):
        gold = random_span_set(rng, 6)
        pred = (
            perturbed_copy(rng, gold) if rng.random() < 0.7 else random_span_set(rng, 6)
        )
        got = outcomes_to_multiset(align_spans(gold, pred))
        want = brute_force_outcomes(gold, pred)
        assert got == want, f"instance {i}: gold={gold} pred={pred}"

    counts = EvalCounts()
    counts.counts[Label.DRUG].update({"COR": 2, "INC": 1, "PAR": 1, "MIS": 1, "SPU": 1})
    strict = score(counts, alpha=0)
    lenient = score(counts, alpha=1)
    assert abs(strict.micro.precision - 0.4) < 1e-12
    assert abs(strict.micro.recall - 0.4) < 1e-12
    assert abs(lenient.micro.precision - 0.6) < 1e-12
    assert abs(lenient.micro.recall - 0.6) < 1e-12
    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    _pass("evaluator vs brute-force oracle", f"1000 instances in {elapsed:.1f}s")


def test_error_type_example_rows():
    """The seven canonical example rows classify exactly as documented."""
    text = (
        "aspirin , 25 units Augmentin XR and for 3 weeks take p.r.n. tablet Codeine"
    )
    gold = [
        EntitySpan(0, 7, Label.DRUG),        # aspirin
        EntitySpan(10, 12, Label.STRENGTH),  # 25
        EntitySpan(19, 28, Label.DRUG),      # Augmentin
        EntitySpan(36, 47, Label.DURATION),  # for 3 weeks
        EntitySpan(53, 59, Label.FREQUENCY), # p.r.n. (gold form)
        EntitySpan(61, 67, Label.FORM),      # tablet
    ]
    pred = [
        EntitySpan(0, 7, Label.DRUG),        # aspirin -> COR
        EntitySpan(10, 12, Label.DOSAGE),    # 25 as Dosage -> INC
        EntitySpan(19, 31, Label.DRUG),      # Augmentin XR -> PAR
        EntitySpan(40, 47, Label.DURATION),  # 3 weeks -> PAR
        EntitySpan(53, 56, Label.FREQUENCY), # prn-style shorter span -> PAR
        EntitySpan(68, 75, Label.DRUG),      # Codeine -> SPU
    ]
    assert text[0:7] == "aspirin" and text[36:47] == "for 3 weeks"
    outcomes = align_spans(gold, pred)
    by_gold = {}
    for out in outcomes:
        key = (out.gold.start, out.gold.end) if out.gold else ("SPU", out.pred.start)
        by_gold[key] = out.kind
    assert by_gold[(0, 7)] == "COR"
    assert by_gold[(10, 12)] == "INC"
    assert by_gold[(19, 28)] == "PAR"
    assert by_gold[(36, 47)] == "PAR"
    assert by_gold[(53, 59)] == "PAR"
    assert by_gold[(61, 67)] == "MIS"
    assert by_gold[("SPU", 68)] == "SPU"
    kinds = sorted(o.kind for o in outcomes)
    assert kinds == ["COR", "INC", "MIS", "PAR", "PAR", "PAR", "SPU"]
    _pass("error-type example rows", "COR/INC/PAR/PAR/PAR/MIS/SPU")


def test_conservation_and_alpha_monotonicity_fuzz():
    """Count conservation and lenient>=strict on 10,000 fuzzed evaluations."""
    rng = random.Random(77)
    start = time.monotonic()
    for _ in range(10_000):
        gold = random_span_set(rng, 6)
        pred = perturbed_copy(rng, gold)
        outcomes = align_spans(gold, pred)
        counts = EvalCounts.from_outcomes(outcomes)
        total = counts.totals()
        assert total["COR"] + total["INC"] + total["PAR"] + total["MIS"] == len(gold)
        assert total["COR"] + total["INC"] + total["PAR"] + total["SPU"] == len(pred)
        strict = score(counts, alpha=0)
        lenient = score(counts, alpha=1)
        for label in LABELS:
            assert lenient.per_label[label].precision >= strict.per_label[label].precision
            assert lenient.per_label[label].recall >= strict.per_label[label].recall
            assert lenient.per_label[label].f1 >= strict.per_label[label].f1
        assert lenient.micro.f1 >= strict.micro.f1
    elapsed = time.monotonic() - start
    _pass("conservation + alpha monotonicity", f"10000 evaluations in {elapsed:.1f}s")


def _random_raw_document(rng: random.Random) -> str:
    pieces = []
    for _ in range(rng.randint(10, 60)):
        roll = rng.random()
        if roll < 0.55:
            pieces.append(
                "".join(rng.choice("abcdefmg0123456789") for _ in range(rng.randint(1, 8)))
            )
        elif roll < 0.65:
            pieces.append(rng.choice(["a@b.com", "team.x@nhs.uk", "p1@z.org"]))
        elif roll < 0.75:
            pieces.append(rng.choice(["https://a.io/x?q=1", "www.site.org/p"]))
        elif roll < 0.85:
            pieces.append(rng.choice(["<br/>", "<p class='x'>", "</div>", "<hr>"]))
        elif roll < 0.93:
            pieces.append(rng.choice(["café", "αβγ", "→", "±5"]))
        else:
            pieces.append(rng.choice(["\t", "\n", "\r"]))
        if rng.random() < 0.75:
            pieces.append(" ")
    return "".join(pieces)


def test_offset_integrity_round_trip():
    """clean/remap on 1000 random documents x 10 annotations each."""
    rng = random.Random(4242)
    start = time.monotonic()
    mismatches = 0
    checked = 0
    for _ in range(1000):
        raw = _random_raw_document(rng)
        cleaned, omap = clean(raw)
        deleted = [omap.is_deleted(i) for i in range(len(raw))]
        spans = []
        for _ in range(10):
            s = rng.randint(0, max(0, len(raw) - 2))
            e = rng.randint(s + 1, min(len(raw), s + 15))
            spans.append(EntitySpan(s, e, Label.DRUG))
        result = remap_spans(spans, omap, "to-cleaned")
        kept = iter(result.spans)
        for span in spans:
            expected = expected_remapped_surface(raw, deleted, span.start, span.end)
            if expected is None:
                assert span in result.dropped
                continue
            mapped = next(kept)
            checked += 1
            if cleaned[mapped.start : mapped.end] != expected:
                mismatches += 1
        untouched = [
            sp
            for sp in spans
            if not any(deleted[sp.start : sp.end])
            and not any(c in "\t\n\r" for c in raw[sp.start : sp.end])
        ]
        forward = remap_spans(untouched, omap, "to-cleaned")
        back = remap_spans(forward.spans, omap, "to-original")
        assert list(back.spans) == untouched
    assert mismatches == 0
    elapsed = time.monotonic() - start
    _pass(
        "offset integrity",
        f"{checked} remapped spans, 0 surface mismatches, {elapsed:.1f}s",
    )


def test_gradient_checks_within_tolerance():
    """Analytic vs central-difference gradients on miniature models."""
    start = time.monotonic()
    h = 1e-6

    def check(params, grads, loss_fn, names):
        worst = 0.0
        for name in names:
            flat = params[name].ravel()
            gflat = grads[name].ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_fn()
                flat[i] = orig - h
                down = loss_fn()
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                if abs(numeric) < 1e-9 and abs(gflat[i]) < 1e-9:
                    continue
                worst = max(
                    worst, abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), 1e-6)
                )
        return worst

    config = TrainConfig(width=8, depth=1, table_size=64, hash_seed=3, seed=5)
    model = TaggerModel.initialize(config)
    tokens = tokenize("aspirin 5 mg p.o. daily now")
    idx = model.hasher.index_array(tokens)
    targets = np.array(
        [
            model.scheme.index[t]
            for t in ("U-Drug", "B-Strength", "L-Strength", "U-Route", "U-Frequency", "O")
        ]
    )
    _loss, grads = model.dense_loss_and_grads([(idx, targets)])
    tagger_worst = check(
        model.params,
        grads,
        lambda: model.dense_loss_and_grads([(idx, targets)])[0],
        sorted(grads),
    )
    assert tagger_worst < 1e-4

    from medspan.lexemb.cloze import ContextEncoder

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pre_config = PretrainConfig(
            width=8, depth=1, epochs=1, window=2, seed=2, table_size=64, hash_seed=3
        )
    encoder = ContextEncoder.initialize(pre_config, dimension=8)
    cloze_tokens = tokenize("take aspirin 5 mg daily")
    token_idx = encoder.hasher.index_array(cloze_tokens)
    windows = np.full((3, 5, 4), -1, dtype=np.int64)
    windows[0, 2:] = token_idx[:3]
    windows[1, 1:] = token_idx[:4]
    windows[2] = token_idx
    rng = np.random.default_rng(1)
    cloze_targets = rng.normal(size=(3, 8))
    cloze_targets /= np.linalg.norm(cloze_targets, axis=1, keepdims=True)
    _loss, cgrads = encoder.dense_loss_and_grads(windows, cloze_targets)
    cloze_worst = check(
        encoder.params,
        cgrads,
        lambda: encoder.dense_loss_and_grads(windows, cloze_targets)[0],
        sorted(cgrads),
    )
    assert cloze_worst < 1e-4
    elapsed = time.monotonic() - start
    assert elapsed < 60.0
    _pass(
        "gradient checks",
        f"tagger rel err {tagger_worst:.2e}, cloze rel err {cloze_worst:.2e}, {elapsed:.1f}s",
    )


@pytest.mark.slow
def test_pretraining_loss_pattern():
    """Cloze loss: starts at 1.0 +- 0.1, 10-epoch moving average strictly
    decreasing over 50 epochs; the 256/16 config ends at or below the
    96/4 default."""
    start = time.monotonic()
    corpus = generate(GeneratorSpec(domain="source", seed=11), 40)
    table, _ = train_static_embeddings(
        corpus, dimension=128, epochs=5, seed=1, min_count=1
    )
    finals = {}
    for width, depth in ((96, 4), (256, 16)):
        config = PretrainConfig(width=width, depth=depth, epochs=50, window=4, seed=1)
        _encoder, losses = pretrain_cloze(corpus, table, config)
        assert 0.9 <= losses[0] <= 1.1, f"{width}/{depth} starts at {losses[0]}"
        moving = [float(np.mean(losses[i : i + 10])) for i in range(len(losses) - 9)]
        assert all(
            moving[i + 1] < moving[i] for i in range(len(moving) - 1)
        ), f"{width}/{depth} moving average not strictly decreasing"
        finals[(width, depth)] = losses[-1]
    assert finals[(256, 16)] <= finals[(96, 4)]
    elapsed = time.monotonic() - start
    assert elapsed < 600.0
    _pass(
        "pretraining loss pattern",
        f"start~1.0, final 96/4={finals[(96, 4)]:.4f} >= 256/16={finals[(256, 16)]:.4f}, "
        f"{elapsed:.0f}s",
    )


@pytest.mark.slow
def test_end_to_end_learning():
    """200 gold training documents reach lenient micro-F1 >= 0.95 on a
    held-out synthetic test split; BILOU and decode fuzz suites hold."""
    start = time.monotonic()
    corpus = generate_split(
        GeneratorSpec(domain="source", seed=42), 250, {"train": 0.8, "dev": 0.1, "test": 0.1}
    )
    assert len(corpus.doc_ids("train")) == 200
    model, _history = train(corpus, TrainConfig(epochs=40, seed=0, silver_ratio=0.0))
    f1 = _evaluate_model(model, corpus)
    assert f1 >= 0.95

    rng = random.Random(5)
    words = "alpha beta gamma delta eps zeta eta theta".split()
    for _ in range(200):
        text = " ".join(rng.choice(words) for _ in range(rng.randint(1, 10)))
        tokens = tokenize(text)
        spans = []
        i = 0
        while i < len(tokens):
            if rng.random() < 0.4:
                j = min(len(tokens) - 1, i + rng.randint(0, 2))
                spans.append(
                    EntitySpan(tokens[i].start, tokens[j].end, rng.choice(LABELS))
                )
                i = j + 1
            else:
                i += 1
        tags = spans_to_tags(spans, tokens, SCHEME)
        assert sorted(tags_to_spans(tags, tokens, SCHEME)) == sorted(spans)

    fuzz_model = TaggerModel.initialize(
        TrainConfig(width=16, depth=1, table_size=64, seed=0)
    )
    fuzz_rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(fuzz_rng.integers(1, 12))
        text = " ".join(words[int(fuzz_rng.integers(len(words)))] for _ in range(n))
        tokens = tokenize(text)
        fuzz_model.params["out.w"] = fuzz_rng.normal(size=fuzz_model.params["out.w"].shape)
        fuzz_model.params["out.b"] = fuzz_rng.normal(size=fuzz_model.params["out.b"].shape)
        tags, _confs = fuzz_model.decode(tokens)
        SCHEME.validate(tags)

    elapsed = time.monotonic() - start
    assert elapsed < 600.0
    _pass("end-to-end learning", f"test lenient micro-F1 {f1:.4f} in {elapsed:.0f}s")


@pytest.mark.slow
def test_train_curve_pattern():
    """Nested 25/50/75/100% fractions: non-decreasing lenient micro-F1
    within 0.01; report rendered with the 0% baseline row."""
    corpus = generate_split(
        GeneratorSpec(domain="source", seed=33), 250, {"train": 0.8, "dev": 0.1, "test": 0.1}
    )
    config = TrainConfig(epochs=25, seed=2, silver_ratio=0.0)
    report = train_curve(corpus, [0.25, 0.5, 0.75, 1.0], config)
    f1s = [row["span_f1_lenient_micro"] for row in report.data["rows"]]
    assert all(f1s[i + 1] >= f1s[i] - 0.01 for i in range(len(f1s) - 1)), f1s
    ids = report.data["subset_doc_ids"]
    assert set(ids["25%"]) < set(ids["50%"]) < set(ids["75%"]) < set(ids["100%"])
    table = report.tables["span F1 (lenient micro, x100)"]
    assert "0% |           0.00 |   baseline" in table
    assert "Fraction" in table and "Delta" in table
    _pass(
        "train-curve pattern",
        "F1 x100: " + " -> ".join(f"{x * 100:.2f}" for x in f1s),
    )


@pytest.mark.slow
def test_transfer_pattern():
    """Shifted-vocabulary target: BEFORE at least 0.10 below the source
    test F1, AFTER within 0.05 of it; tables and confusion CSVs emitted."""
    source = generate_split(
        GeneratorSpec(domain="source", seed=21), 250, {"train": 0.8, "dev": 0.1, "test": 0.1}
    )
    target = generate_split(
        GeneratorSpec(domain="target", seed=22), 120, {"train": 0.65, "dev": 0.1, "test": 0.25}
    )
    config = TrainConfig(epochs=30, seed=5, silver_ratio=0.0)
    report = transfer_study(source, target, config)
    source_f1 = report.data["source_test_f1_lenient_micro"]
    before = report.data["before_f1_lenient_micro"]
    after = report.data["after_f1_lenient_micro"]
    assert before <= source_f1 - 0.10, (source_f1, before)
    assert after >= source_f1 - 0.05, (source_f1, after)
    assert "confusion_before.csv" in report.files
    assert "confusion_after.csv" in report.files
    assert "Before fine-tuning" in report.tables["target-domain per-label results (lenient)"]
    _pass(
        "transfer pattern",
        f"source {source_f1:.3f}, before {before:.3f}, after {after:.3f}",
    )


def test_silver_engine(starter_rules_path):
    """Longest-match fixture plus recall >= 0.95 against generator gold."""
    ruleset = compile_ruleset(starter_rules_path)
    doc = Document("d", "continue treatment for 3 weeks please")
    spans = apply_rules(ruleset, doc).spans
    surfaces = [(doc.text[s.start : s.end], s.label.value) for s in spans]
    assert ("for 3 weeks", "Duration") in surfaces
    assert all(surface != "3 weeks" for surface, _ in surfaces)
    assert apply_rules(ruleset, doc).spans == spans  # deterministic

    corpus = generate(GeneratorSpec(domain="source", seed=99), 120)
    labeled, _report = build_silver_corpus(ruleset, corpus)
    counts = EvalCounts()
    for doc_id in labeled.doc_ids():
        gold = labeled.annotation_for(doc_id, Provenance.GOLD)
        silver = labeled.annotation_for(doc_id, Provenance.SILVER)
        counts.add(
            EvalCounts.from_outcomes(align_spans(gold.spans, silver.spans))
        )
    recall = score(counts, alpha=1).micro.recall
    assert recall >= 0.95
    _pass("silver engine", f"lenient recall {recall:.4f}")


_PIPELINE_CFG = """
[pipeline]
seed = 17

[generate]
enabled = true
docs = 60
domain = source
train = 0.7
dev = 0.15
test = 0.15

[silver]
enabled = true
rules = starter

[embed]
dimension = 32
epochs = 2
min_count = 1

[pretrain]
enabled = true
width = 32
depth = 2
epochs = 2
window = 3

[train]
epochs = 6
silver_ratio = 0.5
patience = 99
"""


def _run_cli(*args):
    result = subprocess.run(
        [sys.executable, "-m", "medspan.cli", *args], capture_output=True, text=True
    )
    assert result.returncode == 0, result.stderr
    return result


@pytest.mark.slow
def test_serialization_and_pipeline_determinism(tmp_path):
    """Bitwise-stable model and corpus round-trips; two CLI pipeline runs
    with one seed produce identical result tables."""
    corpus = generate_split(
        GeneratorSpec(domain="source", seed=8), 60, {"train": 0.8, "dev": 0.1, "test": 0.1}
    )
    model, _ = train(corpus, TrainConfig(epochs=4, seed=0, silver_ratio=0.0))
    m1 = tmp_path / "m1.bin"
    m2 = tmp_path / "m2.bin"
    model.save(m1)
    TaggerModel.load(m1).save(m2)
    assert m1.read_bytes() == m2.read_bytes()

    d1, a1 = tmp_path / "d1.jsonl", tmp_path / "a1.jsonl"
    d2, a2 = tmp_path / "d2.jsonl", tmp_path / "a2.jsonl"
    save_corpus(corpus, d1, a1)
    save_corpus(load_corpus(d1, [a1]), d2, a2)
    assert d1.read_bytes() == d2.read_bytes()
    assert a1.read_bytes() == a2.read_bytes()

    cfg = tmp_path / "pipe.cfg"
    cfg.write_text(_PIPELINE_CFG)
    out_a, out_b = tmp_path / "runA", tmp_path / "runB"
    _run_cli("pipeline", "--config", str(cfg), "--out", str(out_a))
    _run_cli("pipeline", "--config", str(cfg), "--out", str(out_b))
    assert (out_a / "report.json").read_bytes() == (out_b / "report.json").read_bytes()
    assert (out_a / "report.txt").read_bytes() == (out_b / "report.txt").read_bytes()
    assert (out_a / "confusion.csv").read_bytes() == (out_b / "confusion.csv").read_bytes()
    _pass("serialization + pipeline determinism", "bitwise-stable artifacts")


@pytest.mark.slow
def test_primary_suite_is_cli_complete(tmp_path):
    """The full primary workflow runs through the CLI alone; nothing from
    the browser frontend is imported anywhere in this suite."""
    assert not any("frontend" in name for name in sys.modules)

    corpus_dir = tmp_path / "corpus"
    _run_cli("generate", "--out", str(corpus_dir), "--docs", "60", "--seed", "9")
    _run_cli("silver", "--corpus", str(corpus_dir), "--out", str(tmp_path / "silver"))
    _run_cli(
        "embed", "--corpus", str(corpus_dir), "--out", str(tmp_path / "emb.vec"),
        "--dimension", "32", "--epochs", "2",
    )
    cfg = tmp_path / "train.cfg"
    cfg.write_text("[train]\nepochs = 6\nsilver_ratio = 0\npatience = 99\n")
    model_path = tmp_path / "model.bin"
    _run_cli(
        "train", "--corpus", str(corpus_dir), "--out", str(model_path),
        "--config", str(cfg), "--seed", "0",
    )
    _run_cli("model", "inspect", str(model_path))
    pred_path = tmp_path / "pred.jsonl"
    _run_cli(
        "predict", "--model", str(model_path), "--corpus", str(corpus_dir),
        "--out", str(pred_path), "--split", "test",
    )
    pred_ids = {json.loads(l)["doc_id"] for l in pred_path.read_text().splitlines()}
    gold_path = tmp_path / "gold.jsonl"
    gold_path.write_text(
        "\n".join(
            line
            for line in (corpus_dir / "annotations.jsonl").read_text().splitlines()
            if json.loads(line)["doc_id"] in pred_ids
        )
        + "\n"
    )
    _run_cli(
        "evaluate", "--gold", str(gold_path), "--pred", str(pred_path),
        "--out", str(tmp_path / "eval"),
    )
    _run_cli(
        "iaa", "--a", str(corpus_dir / "annotations.jsonl"),
        "--b", str(corpus_dir / "annotations.jsonl"),
    )
    _pass("primary suite CLI-complete", "generate/silver/embed/train/predict/evaluate/iaa")
