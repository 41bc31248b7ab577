import json

import pytest

from medspan.harness.experiments import (
    ExperimentReport,
    evaluate_split,
    train_curve,
    transfer_study,
)
from medspan.harness.generator import GeneratorSpec, generate_split
from medspan.tagger.model import TrainConfig, train


@pytest.fixture(scope="module")
def corpus():
    return generate_split(
        GeneratorSpec(domain="source", seed=33), 120, {"train": 0.7, "dev": 0.15, "test": 0.15}
    )


@pytest.fixture(scope="module")
def fast_config():
    return TrainConfig(epochs=8, seed=2, silver_ratio=0.0, patience=99)


def test_train_curve_validations(corpus, fast_config):
    with pytest.raises(ValueError, match="ascending"):
        train_curve(corpus, [0.5, 0.25], fast_config)
    with pytest.raises(ValueError, match="lie in"):
        train_curve(corpus, [0.5, 1.5], fast_config)
    with pytest.raises(ValueError, match="no fractions"):
        train_curve(corpus, [], fast_config)
    with pytest.raises(ValueError, match="selects no documents"):
        train_curve(corpus, [0.001], fast_config)


def test_train_curve_single_fraction(corpus, fast_config):
    report = train_curve(corpus, [1.0], fast_config)
    table = report.tables["span F1 (lenient micro, x100)"]
    lines = table.strip().splitlines()
    assert "baseline" in lines[2]
    assert lines[3].strip().startswith("100%")
    assert len(report.data["rows"]) == 1


def test_train_curve_nested_and_layout(corpus, fast_config, tmp_path):
    report = train_curve(corpus, [0.5, 1.0], fast_config)
    ids = report.data["subset_doc_ids"]
    assert set(ids["50%"]) < set(ids["100%"])
    assert report.data["nested_subset_sizes"] == [42, 84]
    # layout: fraction column, metric column, delta column; baseline row
    for name in ("span F1 (lenient micro, x100)", "token accuracy (x100)"):
        table = report.tables[name]
        assert "Fraction" in table and "Delta" in table
        assert "0% |           0.00 |   baseline" in table
    report.save(tmp_path)
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["experiment"] == "train-curve"
    assert saved["fingerprint"]["worker_count"] == 1
    assert (tmp_path / "report.txt").exists()


def test_transfer_requires_target_train(corpus, fast_config):
    target = generate_split(
        GeneratorSpec(domain="target", seed=9), 20, {"train": 0.0, "dev": 0.5, "test": 0.5}
    )
    with pytest.raises(ValueError, match="train split"):
        transfer_study(corpus, target, fast_config)


def test_transfer_same_domain_stable(fast_config):
    """Identical source and target distributions: fine-tuning neither helps
    much nor hurts (within 0.02 micro-F1)."""
    source = generate_split(
        GeneratorSpec(domain="source", seed=51), 250, {"train": 0.8, "dev": 0.1, "test": 0.1}
    )
    target = generate_split(
        GeneratorSpec(domain="source", seed=52), 160, {"train": 0.5, "dev": 0.2, "test": 0.3}
    )
    config = TrainConfig(epochs=40, seed=3, silver_ratio=0.0)
    finetune_config = TrainConfig(epochs=15, seed=3, silver_ratio=0.0)
    report = transfer_study(source, target, config, finetune_config=finetune_config)
    before = report.data["before_f1_lenient_micro"]
    after = report.data["after_f1_lenient_micro"]
    assert abs(after - before) <= 0.02
    assert "confusion_before.csv" in report.files
    assert "confusion_after.csv" in report.files
    note = " ".join(report.notes)
    assert "evaluated before and after" in note


def test_evaluate_split_token_accuracy(corpus, fast_config):
    model, _history = train(corpus, fast_config)
    evaluation = evaluate_split(model, corpus, "test")
    assert 0.0 <= evaluation.token_accuracy <= 1.0
    assert evaluation.documents == len(corpus.doc_ids("test"))
    assert evaluation.lenient.micro.f1 >= evaluation.strict.micro.f1


def test_report_save_is_deterministic(tmp_path, corpus, fast_config):
    r1 = train_curve(corpus, [1.0], fast_config)
    r2 = train_curve(corpus, [1.0], fast_config)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    r1.save(d1)
    r2.save(d2)
    assert (d1 / "report.json").read_bytes() == (d2 / "report.json").read_bytes()
    assert (d1 / "report.txt").read_bytes() == (d2 / "report.txt").read_bytes()
