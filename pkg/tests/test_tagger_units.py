import random
import warnings

import numpy as np
import pytest

from medspan.annotstore import LABELS, EntitySpan, Label
from medspan.tagger.bilou import (
    BilouError,
    TagScheme,
    spans_to_tags,
    tags_to_spans,
)
from medspan.tagger.features import FeatureHasher, fnv1a, word_shape
from medspan.textcore import Token, tokenize

SCHEME = TagScheme(LABELS)


# ---- feature hashing ----------------------------------------------------


def test_hashing_deterministic():
    hasher = FeatureHasher(2**13, seed=1)
    assert hasher.indices("mg") == hasher.indices("mg")
    assert FeatureHasher(2**13, seed=1).indices("mg") == hasher.indices("mg")
    assert fnv1a(b"abc", 7) == fnv1a(b"abc", 7)
    assert fnv1a(b"abc", 7) != fnv1a(b"abc", 8)


def test_case_changes_only_shape_key():
    hasher = FeatureHasher(2**13, seed=1)
    upper = hasher.indices("Aspirin")
    lower = hasher.indices("aspirin")
    assert upper[:3] == lower[:3]
    assert upper[3] != lower[3]
    assert word_shape("Aspirin") == "Xxxxx"
    assert word_shape("aspirin") == "xxxx"
    assert word_shape("25mg") == "ddxx"
    assert word_shape("p.o.") == "x.x."


def test_table_size_must_be_power_of_two():
    with pytest.raises(ValueError):
        FeatureHasher(1000)


def test_collision_audit_full_key():
    rng = random.Random(0)
    alphabet = "abcdefghijklmnopqrstuvwxyz0123456789"
    surfaces = set()
    while len(surfaces) < 10_000:
        surfaces.add(
            "".join(rng.choice(alphabet) for _ in range(rng.randint(2, 10)))
        )
    hasher = FeatureHasher(2**18, seed=1)
    seen = {}
    collisions = 0
    for surface in surfaces:
        key = hasher.indices(surface)
        if key in seen:
            collisions += 1
        else:
            seen[key] = surface
    assert collisions / len(surfaces) < 0.05


# ---- BILOU codec ---------------------------------------------------------


def _tokens(text):
    return tokenize(text)


def test_single_token_span_is_unit():
    tokens = _tokens("aspirin daily")
    tags = spans_to_tags([EntitySpan(0, 7, Label.DRUG)], tokens, SCHEME)
    assert SCHEME.tags[tags[0]] == "U-Drug"
    assert SCHEME.tags[tags[1]] == "O"


def test_two_token_span_is_b_l():
    tokens = _tokens("take 5 mg now")
    tags = spans_to_tags([EntitySpan(5, 9, Label.STRENGTH)], tokens, SCHEME)
    names = [SCHEME.tags[t] for t in tags]
    assert names == ["O", "B-Strength", "L-Strength", "O"]


def test_misaligned_span_snaps_outward_with_warning():
    tokens = _tokens("warfarin now")
    with pytest.warns(UserWarning, match="snapped"):
        tags = spans_to_tags([EntitySpan(2, 6, Label.DRUG)], tokens, SCHEME)
    assert SCHEME.tags[tags[0]] == "U-Drug"


def test_overlapping_spans_rejected():
    tokens = _tokens("one two three")
    with pytest.raises(BilouError, match="overlap"):
        spans_to_tags(
            [EntitySpan(0, 7, Label.DRUG), EntitySpan(4, 13, Label.FORM)],
            tokens,
            SCHEME,
        )


def test_tags_to_spans_rejects_invalid_transitions():
    tokens = _tokens("a b c")
    bad = [SCHEME.index["B-Drug"], SCHEME.index["O"], SCHEME.index["O"]]
    with pytest.raises(BilouError, match="invalid transition"):
        tags_to_spans(bad, tokens, SCHEME)
    with pytest.raises(BilouError, match="start"):
        tags_to_spans([SCHEME.index["I-Drug"]] * 3, tokens, SCHEME)
    with pytest.raises(BilouError, match="end"):
        tags_to_spans(
            [SCHEME.index["O"], SCHEME.index["O"], SCHEME.index["B-Drug"]],
            tokens,
            SCHEME,
        )


def _random_aligned_spans(rng, tokens):
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
    return spans


def test_bilou_round_trip_randomized():
    rng = random.Random(1234)
    words = "alpha beta gamma delta eps zeta eta theta iota kappa".split()
    for _ in range(300):
        text = " ".join(rng.choice(words) for _ in range(rng.randint(1, 12)))
        tokens = _tokens(text)
        spans = _random_aligned_spans(rng, tokens)
        tags = spans_to_tags(spans, tokens, SCHEME)
        SCHEME.validate(tags)
        back = tags_to_spans(tags, tokens, SCHEME)
        assert sorted(back) == sorted(spans)


def test_transition_table_shape():
    # exactly the documented follow sets
    assert SCHEME.transitions[SCHEME.index["O"], SCHEME.index["B-Drug"]]
    assert SCHEME.transitions[SCHEME.index["L-Drug"], SCHEME.index["U-Form"]]
    assert not SCHEME.transitions[SCHEME.index["O"], SCHEME.index["I-Drug"]]
    assert not SCHEME.transitions[SCHEME.index["B-Drug"], SCHEME.index["I-Form"]]
    assert SCHEME.transitions[SCHEME.index["B-Drug"], SCHEME.index["I-Drug"]]
    assert not SCHEME.transitions[SCHEME.index["B-Drug"], SCHEME.index["O"]]


def test_decode_validity_fuzz():
    """Constrained greedy decode never violates the transition table."""
    from medspan.tagger.model import TaggerModel, TrainConfig

    config = TrainConfig(width=16, depth=1, table_size=64, seed=0)
    model = TaggerModel.initialize(config)
    rng = np.random.default_rng(0)
    words = "aaa bb c dddd ee fff 12 34 mg".split()
    for trial in range(200):
        n = int(rng.integers(1, 12))
        text = " ".join(words[int(rng.integers(len(words)))] for _ in range(n))
        tokens = tokenize(text)
        # randomize weights so scores are arbitrary
        model.params["out.w"] = rng.normal(size=model.params["out.w"].shape)
        model.params["out.b"] = rng.normal(size=model.params["out.b"].shape)
        tags, confs = model.decode(tokens)
        SCHEME.validate(tags)
        assert all(0.0 <= c <= 1.0 for c in confs)
