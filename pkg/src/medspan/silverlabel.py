"""Weak supervision: gazetteers and token-pattern rules that emit silver
annotation sets.

Rules match over token sequences (never raw characters, so "mg" cannot
hit inside "mgso4").  Raw matches are resolved deterministically: longer
span wins, then higher priority, then earlier rule id, then earlier
start.  The rule DSL is line-based; see docs/rules.md for the grammar:

    lexicon <name>        # following lines are entries, one per line
    rule <id> <label> <priority>: <matcher> ...

Matchers: ``lower:<str>``, ``in:<lexicon>``, ``num``, ``shape:<pattern>``,
``rep:<matcher>{m,n}``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from medspan.annotstore import AnnotationSet, Corpus, EntitySpan, Label, Provenance
from medspan.tagger.features import word_shape
from medspan.textcore import Document, Token, tokenize


class RuleSyntaxError(ValueError):
    """Rule file failed to compile; message carries file and line."""


@dataclass(frozen=True)
class Lexicon:
    """Named gazetteer; multi-token entries are stored pre-tokenized."""

    name: str
    entries: frozenset[tuple[str, ...]]
    source: str = "manual"  # manual | bootstrapped | external-list

    def __post_init__(self) -> None:
        if not self.entries:
            raise RuleSyntaxError(f"lexicon {self.name!r} has no entries")

    @property
    def lengths(self) -> tuple[int, ...]:
        return tuple(sorted({len(e) for e in self.entries}, reverse=True))


class Matcher:
    """One step of a rule pattern; yields every token count it can consume
    starting at a position (longest first)."""

    def consume(self, surfaces: Sequence[str], pos: int) -> Iterator[int]:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class LowerMatcher(Matcher):
    text: str

    def consume(self, surfaces, pos):
        if pos < len(surfaces) and surfaces[pos] == self.text:
            yield 1

    def describe(self) -> str:
        return f"lower:{self.text}"


@dataclass(frozen=True)
class NumMatcher(Matcher):
    def consume(self, surfaces, pos):
        if pos < len(surfaces) and surfaces[pos].isdigit():
            yield 1

    def describe(self) -> str:
        return "num"


@dataclass(frozen=True)
class ShapeMatcher(Matcher):
    pattern: str

    def consume(self, surfaces, pos):
        if pos < len(surfaces) and word_shape(surfaces[pos]) == self.pattern:
            yield 1

    def describe(self) -> str:
        return f"shape:{self.pattern}"


@dataclass(frozen=True)
class LexiconMatcher(Matcher):
    name: str
    lexicon: Lexicon

    def consume(self, surfaces, pos):
        for length in self.lexicon.lengths:
            if pos + length <= len(surfaces):
                if tuple(surfaces[pos : pos + length]) in self.lexicon.entries:
                    yield length

    def describe(self) -> str:
        return f"in:{self.name}"


@dataclass(frozen=True)
class RepMatcher(Matcher):
    inner: Matcher
    lo: int
    hi: int

    def consume(self, surfaces, pos):
        # all reachable widths for lo..hi inner repetitions, longest first
        widths = {0} if self.lo == 0 else set()
        frontier = {0}
        for rep in range(1, self.hi + 1):
            nxt = set()
            for width in frontier:
                for step in self.inner.consume(surfaces, pos + width):
                    nxt.add(width + step)
            if not nxt:
                break
            frontier = nxt
            if rep >= self.lo:
                widths |= nxt
        for width in sorted(widths, reverse=True):
            yield width

    def describe(self) -> str:
        return f"rep:{self.inner.describe()}{{{self.lo},{self.hi}}}"


@dataclass(frozen=True)
class PatternRule:
    id: str
    label: Label
    priority: int
    matchers: tuple[Matcher, ...]

    def __post_init__(self) -> None:
        if not self.matchers:
            raise RuleSyntaxError(f"rule {self.id!r} has an empty matcher sequence")

    def matches(self, surfaces: Sequence[str], start: int) -> list[int]:
        """All exclusive end positions for a match beginning at start."""
        ends: set[int] = set()

        def walk(step: int, pos: int) -> None:
            if step == len(self.matchers):
                if pos > start:
                    ends.add(pos)
                return
            for width in self.matchers[step].consume(surfaces, pos):
                walk(step + 1, pos + width)

        walk(0, start)
        return sorted(ends, reverse=True)


@dataclass
class RuleSet:
    """Compiled rules in deterministic order (priority desc, then id)."""

    rules: tuple[PatternRule, ...]
    lexicons: dict[str, Lexicon]

    def __post_init__(self) -> None:
        ids = [r.id for r in self.rules]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise RuleSyntaxError(f"duplicate rule ids: {sorted(dupes)}")
        ordered = sorted(self.rules, key=lambda r: (-r.priority, r.id))
        self.rules = tuple(ordered)


_REP_RE = re.compile(r"^rep:(?P<inner>.+)\{(?P<lo>\d+),(?P<hi>\d+)\}$")
_RULE_RE = re.compile(
    r"^rule\s+(?P<id>\S+)\s+(?P<label>\S+)\s+(?P<priority>-?\d+)\s*:\s*(?P<body>.+)$"
)
_LEXICON_RE = re.compile(r"^lexicon\s+(?P<name>[A-Za-z0-9_.-]+)\s*(?:\((?P<source>[a-z-]+)\))?$")


def _parse_matcher(text: str, lexicons: dict[str, Lexicon], where: str) -> Matcher:
    rep = _REP_RE.match(text)
    if rep:
        if rep.group("inner").startswith("rep:"):
            raise RuleSyntaxError(f"{where}: nested rep is not supported")
        lo, hi = int(rep.group("lo")), int(rep.group("hi"))
        if lo > hi or hi < 1:
            raise RuleSyntaxError(f"{where}: bad repetition bounds {{{lo},{hi}}}")
        return RepMatcher(_parse_matcher(rep.group("inner"), lexicons, where), lo, hi)
    if text == "num":
        return NumMatcher()
    if text.startswith("lower:"):
        value = text[len("lower:") :]
        if not value:
            raise RuleSyntaxError(f"{where}: empty lower: matcher")
        return LowerMatcher(value.lower())
    if text.startswith("shape:"):
        value = text[len("shape:") :]
        if not value:
            raise RuleSyntaxError(f"{where}: empty shape: matcher")
        return ShapeMatcher(value)
    if text.startswith("in:"):
        name = text[len("in:") :]
        if name not in lexicons:
            raise RuleSyntaxError(f"{where}: unknown lexicon {name!r}")
        return LexiconMatcher(name, lexicons[name])
    raise RuleSyntaxError(f"{where}: malformed matcher {text!r}")


def _tokenize_entry(entry: str) -> tuple[str, ...]:
    return tuple(t.surface for t in tokenize(entry.lower()))


def compile_ruleset(path: Path | str) -> RuleSet:
    """Parse and validate a rule file; all errors carry file:line."""
    path = Path(path)
    lexicons: dict[str, Lexicon] = {}
    rules: list[PatternRule] = []
    current_name: Optional[str] = None
    current_entries: set[tuple[str, ...]] = set()
    current_source = "manual"

    def flush() -> None:
        nonlocal current_name, current_entries
        if current_name is not None:
            if not current_entries:
                raise RuleSyntaxError(f"{path}: lexicon {current_name!r} has no entries")
            lexicons[current_name] = Lexicon(
                current_name, frozenset(current_entries), current_source
            )
            current_name = None
            current_entries = set()

    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].rstrip()
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            if line.startswith("lexicon"):
                flush()
                m = _LEXICON_RE.match(line.strip())
                if not m:
                    raise RuleSyntaxError(f"{where}: malformed lexicon header")
                if m.group("name") in lexicons:
                    raise RuleSyntaxError(f"{where}: duplicate lexicon {m.group('name')!r}")
                current_name = m.group("name")
                current_source = m.group("source") or "manual"
            elif line.startswith("rule"):
                flush()
                m = _RULE_RE.match(line.strip())
                if not m:
                    raise RuleSyntaxError(f"{where}: malformed rule line")
                try:
                    label = Label(m.group("label"))
                except ValueError:
                    raise RuleSyntaxError(
                        f"{where}: unknown label {m.group('label')!r}"
                    ) from None
                matchers = tuple(
                    _parse_matcher(part, lexicons, where)
                    for part in m.group("body").split()
                )
                rules.append(
                    PatternRule(m.group("id"), label, int(m.group("priority")), matchers)
                )
            else:
                if current_name is None:
                    raise RuleSyntaxError(f"{where}: entry outside a lexicon section")
                entry = _tokenize_entry(line.strip())
                if entry:
                    current_entries.add(entry)
    flush()
    return RuleSet(tuple(rules), lexicons)


@dataclass(frozen=True)
class RawMatch:
    rule: PatternRule
    rule_order: int
    token_start: int
    token_end: int
    char_start: int
    char_end: int

    @property
    def char_len(self) -> int:
        return self.char_end - self.char_start


def find_matches(
    ruleset: RuleSet, tokens: Sequence[Token]
) -> list[RawMatch]:
    """Every raw rule match, before conflict resolution."""
    surfaces = [t.surface.lower() for t in tokens]
    out = []
    for order, rule in enumerate(ruleset.rules):
        for start in range(len(tokens)):
            for end in rule.matches(surfaces, start):
                out.append(
                    RawMatch(
                        rule,
                        order,
                        start,
                        end,
                        tokens[start].start,
                        tokens[end - 1].end,
                    )
                )
    return out


def _resolve(raw: list[RawMatch]) -> list[RawMatch]:
    """Deterministic conflict resolution: longer span, then higher
    priority, then earlier rule, then earlier start."""
    raw = sorted(raw, key=lambda m: (-m.char_len, -m.rule.priority, m.rule_order, m.char_start))
    taken: list[RawMatch] = []
    for match in raw:
        if any(
            match.char_start < t.char_end and t.char_start < match.char_end
            for t in taken
        ):
            continue
        taken.append(match)
    return sorted(taken, key=lambda m: m.char_start)


def apply_rules(
    ruleset: RuleSet, doc: Document, tokens: Optional[Sequence[Token]] = None
) -> AnnotationSet:
    """Silver annotations for one document.

    Conflicts resolve by span length, then priority, then rule order,
    then start offset; the output is non-overlapping and sorted.
    """
    if tokens is None:
        tokens = tokenize(doc.text)
    taken = _resolve(find_matches(ruleset, tokens))
    spans = tuple(
        EntitySpan(m.char_start, m.char_end, m.rule.label) for m in taken
    )
    return AnnotationSet(doc.id, spans, Provenance.SILVER)


@dataclass
class SilverReport:
    """Per-label span counts and per-rule fire counts."""

    label_counts: dict[Label, int] = field(default_factory=dict)
    rule_fires: dict[str, int] = field(default_factory=dict)
    documents: int = 0

    def to_dict(self) -> dict:
        return {
            "documents": self.documents,
            "label_counts": {l.value: self.label_counts.get(l, 0) for l in Label},
            "rule_fires": dict(sorted(self.rule_fires.items())),
        }


def build_silver_corpus(
    ruleset: RuleSet, corpus: Corpus, doc_ids: Optional[Iterable[str]] = None
) -> tuple[Corpus, SilverReport]:
    """Label every document (or the given subset) with silver annotations."""
    ids = sorted(doc_ids) if doc_ids is not None else corpus.doc_ids()
    if not ids:
        raise ValueError("no documents to label")
    report = SilverReport(
        label_counts={l: 0 for l in Label},
        rule_fires={r.id: 0 for r in ruleset.rules},
    )
    sets = []
    for doc_id in ids:
        doc = corpus.documents[doc_id]
        tokens = tokenize(doc.text)
        taken = _resolve(find_matches(ruleset, tokens))
        for match in taken:
            report.label_counts[match.rule.label] += 1
            report.rule_fires[match.rule.id] += 1
        spans = tuple(
            EntitySpan(m.char_start, m.char_end, m.rule.label)
            for m in sorted(taken, key=lambda m: m.char_start)
        )
        sets.append(AnnotationSet(doc_id, spans, Provenance.SILVER))
        report.documents += 1
    return corpus.with_annotations(sets), report
