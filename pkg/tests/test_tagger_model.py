import json
import warnings

import numpy as np
import pytest

from medspan.annotstore import Corpus, Label, Provenance
from medspan.harness.generator import GeneratorSpec, generate, generate_split
from medspan.lexemb import PretrainConfig, pretrain_cloze, train_static_embeddings
from medspan.nnet import container_header
from medspan.silverlabel import build_silver_corpus, compile_ruleset
from medspan.tagger.model import (
    TaggerConfigError,
    TaggerModel,
    TrainConfig,
    fine_tune,
    predict,
    train,
)
from medspan.textcore import Document


@pytest.fixture(scope="module")
def small_corpus():
    return generate_split(
        GeneratorSpec(domain="source", seed=42), 150, {"train": 0.8, "dev": 0.1, "test": 0.1}
    )


@pytest.fixture(scope="module")
def trained(small_corpus):
    config = TrainConfig(epochs=30, seed=0, silver_ratio=0.0)
    model, history = train(small_corpus, config)
    return model, history


def test_training_learns(trained):
    _model, history = trained
    assert max(h["dev_f1"] for h in history) >= 0.9
    losses = [h["loss"] for h in history[:5]]
    smoothed = [np.mean(losses[max(0, i - 2) : i + 1]) for i in range(len(losses))]
    assert smoothed[-1] < smoothed[0]


def test_predict_held_out_sentence(trained):
    model, _ = trained
    doc = Document("probe", "Started warfarin 5 mg twice daily .")
    ann, confs = predict(model, doc)
    found = {(doc.text[s.start : s.end], s.label.value) for s in ann.spans}
    assert ("warfarin", "Drug") in found
    assert ("5 mg", "Strength") in found
    assert ("twice daily", "Frequency") in found
    assert len(confs) == len(ann.spans)
    assert all(0.0 <= c <= 1.0 for c in confs)
    assert ann.provenance is Provenance.MODEL


def test_predict_empty_document(trained):
    model, _ = trained
    ann, confs = predict(model, Document("empty", ""))
    assert ann.spans == () and confs == ()


def test_featurize_matches_sum_of_rows(trained):
    from medspan.textcore import tokenize

    model, _ = trained
    tokens = tokenize("aspirin mg mg")
    vecs = model.featurize(tokens)
    assert np.array_equal(vecs[1], vecs[2])  # identical surfaces
    idx = model.hasher.index_array(tokens)
    manual = model.params["emb"][idx[0]].sum(axis=0)
    assert np.allclose(vecs[0], manual)


def test_train_requires_gold():
    corpus = generate(GeneratorSpec(domain="source", seed=1), 5)  # no splits
    with pytest.raises(TaggerConfigError, match="gold"):
        train(corpus, TrainConfig(epochs=1))


def test_train_with_silver_mixing(small_corpus, starter_rules_path):
    ruleset = compile_ruleset(starter_rules_path)
    labeled, _report = build_silver_corpus(
        ruleset, small_corpus, small_corpus.doc_ids("train")
    )
    config = TrainConfig(epochs=3, seed=0, silver_ratio=0.5)
    model, history = train(labeled, config)
    assert len(history) == 3
    # degenerate: ratio 0 with no silver data also trains
    config0 = TrainConfig(epochs=1, seed=0, silver_ratio=0.0)
    train(small_corpus, config0)


def test_fine_tune_zero_epochs_identity(trained, small_corpus):
    model, _ = trained
    tuned, history = fine_tune(model, small_corpus, TrainConfig(epochs=0, seed=0))
    assert history == []
    for key in model.params:
        assert np.array_equal(tuned.params[key], model.params[key])
    assert tuned.version != model.version  # version still bumps


def test_fine_tune_guard_warns_on_regression(trained, small_corpus):
    model, _ = trained
    sabotage = TrainConfig(epochs=3, seed=0, learning_rate=5.0, silver_ratio=0.0)
    with pytest.warns(UserWarning, match="regressed"):
        fine_tune(
            model,
            small_corpus,
            sabotage,
            guard_corpus=small_corpus,
            guard_tolerance=0.05,
        )


def test_serialization_round_trip(trained, tmp_path):
    model, _ = trained
    path = tmp_path / "model.bin"
    model.save(path)
    loaded = TaggerModel.load(path)
    doc = Document("fixture", "Continue metformin 850 mg daily for 2 weeks .")
    first, confs1 = predict(loaded, doc)
    loaded.save(tmp_path / "model2.bin")
    assert (tmp_path / "model2.bin").read_bytes() == path.read_bytes()
    again = TaggerModel.load(tmp_path / "model2.bin")
    second, confs2 = predict(again, doc)
    assert first.spans == second.spans
    assert confs1 == confs2
    header = container_header(path)
    assert header["kind"] == "tagger-model"
    assert header["meta"]["labels"] == [l.value for l in Label]
    assert {a["name"] for a in header["arrays"]} >= {"emb", "out.w", "out.b"}


def test_load_rejects_wrong_kind(tmp_path, small_corpus):
    from medspan import nnet

    nnet.save_container(tmp_path / "x.bin", "context-encoder", {}, {"a": np.zeros(2)})
    with pytest.raises(TaggerConfigError, match="expected tagger-model"):
        TaggerModel.load(tmp_path / "x.bin")


def test_from_encoder_mismatch_errors(small_corpus):
    table, _ = train_static_embeddings(
        small_corpus, dimension=16, epochs=1, seed=1, min_count=1
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = PretrainConfig(width=16, depth=1, epochs=0, window=2, seed=0)
    encoder, _ = pretrain_cloze(small_corpus, table, cfg)
    with pytest.raises(TaggerConfigError, match="width/depth"):
        TaggerModel.from_encoder(encoder, TrainConfig(width=32, depth=1))
    with pytest.raises(TaggerConfigError, match="hasher"):
        TaggerModel.from_encoder(
            encoder, TrainConfig(width=16, depth=1, table_size=encoder.hasher.table_size * 2)
        )


def test_pretrained_init_helps_small_data():
    """Paired runs, same seed and data: the pretrained start reaches at
    least the random start's dev F1 by epoch 5 (direction claim)."""
    unlabeled = generate(GeneratorSpec(domain="source", seed=70), 160)
    table, _ = train_static_embeddings(
        unlabeled, dimension=64, epochs=5, seed=1, min_count=1
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = PretrainConfig(width=48, depth=2, epochs=10, window=3, seed=1)
    encoder, _ = pretrain_cloze(unlabeled, table, cfg)
    labeled = generate_split(
        GeneratorSpec(domain="source", seed=71), 50, {"train": 0.8, "dev": 0.2, "test": 0.0}
    )
    margins = []
    for seed in (0, 1, 5):
        config = TrainConfig(
            epochs=5,
            seed=seed,
            silver_ratio=0.0,
            width=48,
            depth=2,
            patience=99,
            learning_rate=0.5,
            batch_start=2.0,
            dropout=0.1,
        )
        _m1, random_history = train(labeled, config)
        _m2, pretrained_history = train(labeled, config, init=encoder)
        random_f1 = random_history[-1]["dev_f1"]
        pretrained_f1 = pretrained_history[-1]["dev_f1"]
        assert pretrained_f1 >= random_f1 - 1e-9
        margins.append(pretrained_f1 - random_f1)
    assert np.mean(margins) > 0.0
