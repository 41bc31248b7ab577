import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from medspan.annotstore import LABELS, EntitySpan


def random_span_set(rng: random.Random, max_spans: int, length: int = 60):
    """Random non-overlapping labeled spans over [0, length)."""
    n = rng.randint(0, max_spans)
    if n == 0:
        return []
    cuts = sorted(rng.sample(range(length + 1), 2 * n))
    spans = []
    for i in range(n):
        start, end = cuts[2 * i], cuts[2 * i + 1]
        if start == end:
            continue
        spans.append(EntitySpan(start, end, rng.choice(LABELS)))
    return spans


def perturbed_copy(rng: random.Random, spans, length: int = 60):
    """Prediction-like variant: keep, shift, relabel, drop, and add."""
    out = []
    occupied = []

    def free(s, e):
        return all(e <= a or b <= s for a, b in occupied)

    for span in spans:
        roll = rng.random()
        if roll < 0.15:
            continue  # dropped -> MIS
        start, end, label = span.start, span.end, span.label
        if roll < 0.35:
            start = max(0, start - rng.randint(0, 2))
            end = min(length, end + rng.randint(0, 2))
            if rng.random() < 0.5 and end - start > 2:
                start += 1
        if rng.random() < 0.2:
            label = rng.choice(LABELS)
        if start < end and free(start, end):
            occupied.append((start, end))
            out.append(EntitySpan(start, end, label))
    for _ in range(rng.randint(0, 2)):  # spurious additions
        start = rng.randint(0, length - 2)
        end = min(length, start + rng.randint(1, 4))
        if free(start, end):
            occupied.append((start, end))
            out.append(EntitySpan(start, end, rng.choice(LABELS)))
    return out


@pytest.fixture(scope="session")
def starter_rules_path() -> str:
    from importlib import resources

    return str(resources.files("medspan") / "rules" / "starter.rules")
