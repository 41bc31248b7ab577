"""Annotation project store for the active-learning loop.

Single mutable owner of all annotation state.  Every write serializes
through one lock; decisions append to a log file before the in-memory
state changes, so replaying the log reconstructs the store exactly.  The
serving model is swapped atomically (reference assignment under the
lock), and documents are leased to one session at a time.
"""
from __future__ import annotations

import hashlib
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from medspan.annotstore import (
    AnnotationSet,
    Corpus,
    EntitySpan,
    Label,
    Provenance,
    load_corpus,
    save_corpus,
)
from medspan.evalkit import iaa as iaa_op
from medspan.tagger.model import (
    TaggerModel,
    TrainConfig,
    dev_lenient_f1,
    fine_tune,
    predict,
)
from medspan.textcore import tokenize

DISPOSITIONS = ("accepted", "corrected", "added", "rejected")
DEFAULT_LEASE_SECONDS = 30 * 60
DEFAULT_RETRAIN_MIN_DECISIONS = 25
DEFAULT_REGRESSION_TOLERANCE = 0.01


class StoreError(ValueError):
    """Validation failure inside the annotation store."""

    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code


@dataclass
class Session:
    session_id: str
    annotator_id: str
    queue: list[str] = field(default_factory=list)
    position: int = 0
    started_at: float = 0.0
    updated_at: float = 0.0


@dataclass(frozen=True)
class Suggestion:
    doc_id: str
    spans: tuple[EntitySpan, ...]
    confidences: tuple[float, ...]
    model_version: str

    @property
    def uncertainty(self) -> float:
        if not self.spans:
            return 0.5
        return 1.0 - sum(self.confidences) / len(self.confidences)

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "spans": [
                {
                    "start": s.start,
                    "end": s.end,
                    "label": s.label.value,
                    "confidence": c,
                }
                for s, c in zip(self.spans, self.confidences)
            ],
            "model_version": self.model_version,
            "uncertainty": self.uncertainty,
        }


class ProjectStore:
    """State for one annotation project, backed by a directory."""

    def __init__(
        self,
        directory: Path | str,
        corpus: Corpus,
        model: Optional[TaggerModel],
        project_id: str = "default",
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        clock=time.time,
    ) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.project_id = project_id
        self.lease_seconds = lease_seconds
        self.clock = clock
        self._lock = threading.RLock()
        self.corpus = corpus
        self.model = model
        self.sessions: dict[str, Session] = {}
        # doc -> (session, expiry, suggestion served with the lease)
        self.leases: dict[str, tuple[str, float, Suggestion]] = {}
        self.decided: dict[tuple[str, str], dict] = {}  # (doc, annotator) -> decision
        self._decision_ids: set[str] = set()
        self._suggestions: dict[tuple[str, str], Suggestion] = {}
        self.decisions_since_retrain = 0
        self._log_path = self.directory / "decisions.log"
        if self._log_path.exists():
            self._replay_log()

    # -- construction ----------------------------------------------------

    @classmethod
    def open(
        cls,
        directory: Path | str,
        corpus_dir: Optional[Path | str] = None,
        model_path: Optional[Path | str] = None,
        **kwargs,
    ) -> "ProjectStore":
        directory = Path(directory)
        base = Path(corpus_dir) if corpus_dir else directory
        doc_path = base / "documents.jsonl"
        ann_path = base / "annotations.jsonl"
        corpus = load_corpus(doc_path, [ann_path] if ann_path.exists() else [])
        model = TaggerModel.load(model_path) if model_path else None
        return cls(directory, corpus, model, **kwargs)

    # -- log persistence ---------------------------------------------------

    def _append_log(self, record: dict) -> None:
        with open(self._log_path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
            handle.flush()

    def _replay_log(self) -> None:
        with open(self._log_path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                self._apply_decision(record, replay=True)

    def snapshot(self) -> None:
        """Write the current corpus (gold + human) beside the log."""
        with self._lock:
            save_corpus(
                self.corpus,
                self.directory / "documents.jsonl",
                self.directory / "annotations.jsonl",
            )

    # -- leases and sessions ------------------------------------------------

    def create_session(self, annotator_id: str) -> Session:
        with self._lock:
            now = self.clock()
            session = Session(
                session_id=uuid.uuid4().hex[:12],
                annotator_id=annotator_id,
                started_at=now,
                updated_at=now,
            )
            self.sessions[session.session_id] = session
            return session

    def _session(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise StoreError("unknown_session", f"no session {session_id!r}")
        return session

    def _lease_holder(self, doc_id: str, now: float) -> Optional[str]:
        held = self.leases.get(doc_id)
        if held is None or held[1] <= now:
            return None
        return held[0]

    def _undecided_docs(self, annotator_id: str) -> list[str]:
        """Docs this annotator has not decided yet.  Another annotator's
        decision does not hide a document; overlap is what pairwise
        agreement is computed from."""
        return [
            d
            for d in self.corpus.doc_ids()
            if (d, annotator_id) not in self.decided
        ]

    def suggestion_for(self, doc_id: str) -> Suggestion:
        version = self.model.version if self.model is not None else "none"
        key = (doc_id, version)
        cached = self._suggestions.get(key)
        if cached is not None:
            return cached
        if self.model is None:
            suggestion = Suggestion(doc_id, (), (), version)
        else:
            ann, confs = predict(self.model, self.corpus.documents[doc_id])
            suggestion = Suggestion(doc_id, ann.spans, confs, version)
        self._suggestions[key] = suggestion
        return suggestion

    def next_task(self, session_id: str) -> Optional[tuple[dict, Suggestion]]:
        """Highest-uncertainty unleased document, leased to this session.

        Returns None when the queue is exhausted (the done signal).
        """
        with self._lock:
            session = self._session(session_id)
            now = self.clock()
            candidates = []
            for doc_id in self._undecided_docs(session.annotator_id):
                holder = self._lease_holder(doc_id, now)
                if holder is not None and holder != session_id:
                    continue
                suggestion = self.suggestion_for(doc_id)
                candidates.append((-suggestion.uncertainty, doc_id, suggestion))
            if not candidates:
                return None
            candidates.sort(key=lambda item: (item[0], item[1]))
            _neg, doc_id, suggestion = candidates[0]
            self.leases[doc_id] = (session_id, now + self.lease_seconds, suggestion)
            if doc_id not in session.queue:
                session.queue.append(doc_id)
                session.position = len(session.queue)
            session.updated_at = now
            doc = self.corpus.documents[doc_id]
            payload = {
                "id": doc.id,
                "text": doc.text,
                "meta": dict(doc.meta),
                "tokens": [
                    {"start": t.start, "end": t.end} for t in tokenize(doc.text)
                ],
            }
            return payload, suggestion

    # -- decisions ------------------------------------------------------------

    @staticmethod
    def decision_id(record: dict) -> str:
        blob = json.dumps(
            {
                "doc_id": record["doc_id"],
                "annotator_id": record["annotator_id"],
                "spans": record["spans"],
                "dispositions": record["dispositions"],
            },
            sort_keys=True,
        ).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:24]

    def _validate_decision(self, record: dict) -> None:
        doc = self.corpus.documents.get(record["doc_id"])
        if doc is None:
            raise StoreError("unknown_doc", f"unknown doc_id {record['doc_id']!r}")
        spans = sorted(
            (int(s["start"]), int(s["end"]), str(s["label"])) for s in record["spans"]
        )
        for start, end, label in spans:
            if not 0 <= start < end <= len(doc.text):
                raise StoreError(
                    "span_bounds", f"span ({start}, {end}) out of bounds for {doc.id}"
                )
            if label not in Label._value2member_map_:
                raise StoreError("bad_label", f"unknown label {label!r}")
        for (s1, e1, _), (s2, e2, _) in zip(spans, spans[1:]):
            if s2 < e1:
                raise StoreError(
                    "span_overlap", f"overlapping spans ({s1},{e1}) and ({s2},{e2})"
                )
        for disposition in record["dispositions"]:
            if disposition["disposition"] not in DISPOSITIONS:
                raise StoreError(
                    "bad_disposition",
                    f"unknown disposition {disposition['disposition']!r}",
                )

    def _apply_decision(self, record: dict, replay: bool = False) -> None:
        decision_id = record["decision_id"]
        self._decision_ids.add(decision_id)
        spans = tuple(
            EntitySpan(int(s["start"]), int(s["end"]), Label(s["label"]))
            for s in record["spans"]
        )
        ann = AnnotationSet(
            record["doc_id"], spans, Provenance.HUMAN, record["annotator_id"]
        )
        self.corpus = self.corpus.with_annotations([ann])
        self.decided[(record["doc_id"], record["annotator_id"])] = record
        self.decisions_since_retrain += 1

    def submit(self, session_id: str, decision: dict) -> dict:
        """Validate, log, and apply one decision.  Idempotent.

        The document must currently be leased to the submitting session.
        Every model-suggested span must carry a disposition; the final
        spans become a human-provenance annotation set.
        """
        with self._lock:
            session = self._session(session_id)
            doc_id = decision.get("doc_id")
            record = {
                "doc_id": doc_id,
                "annotator_id": decision.get("annotator_id") or session.annotator_id,
                "spans": [
                    {
                        "start": int(s["start"]),
                        "end": int(s["end"]),
                        "label": str(s["label"]),
                    }
                    for s in decision.get("spans", [])
                ],
                "dispositions": [
                    {
                        "start": int(d["start"]),
                        "end": int(d["end"]),
                        "label": str(d["label"]),
                        "disposition": str(d["disposition"]),
                    }
                    for d in decision.get("dispositions", [])
                ],
            }
            self._validate_decision(record)
            decision_id = self.decision_id(record)
            if decision_id in self._decision_ids:
                # retry of an already-applied decision: identical effect
                return {"decision_id": decision_id, "stored": True, "replayed": True}
            now = self.clock()
            lease = self.leases.get(doc_id)
            if lease is None or lease[0] != session_id:
                raise StoreError(
                    "not_leased", f"document {doc_id!r} is not leased to this session"
                )
            if lease[1] <= now:
                raise StoreError("lease_expired", f"lease on {doc_id!r} expired")
            suggested = {(s.start, s.end, s.label.value) for s in lease[2].spans}
            covered = {
                (d["start"], d["end"], d["label"]) for d in record["dispositions"]
            }
            if suggested - covered:
                raise StoreError(
                    "missing_disposition",
                    f"model spans without disposition: {sorted(suggested - covered)}",
                )
            record["decision_id"] = decision_id
            record["timestamp"] = now
            self._append_log(record)
            self._apply_decision(record)
            self.leases.pop(doc_id, None)
            session.updated_at = now
            return {"decision_id": decision_id, "stored": True, "replayed": False}

    # -- retraining -------------------------------------------------------------

    def retrain(
        self,
        config: Optional[TrainConfig] = None,
        min_new_decisions: int = DEFAULT_RETRAIN_MIN_DECISIONS,
        regression_tolerance: float = DEFAULT_REGRESSION_TOLERANCE,
    ) -> dict:
        """Fine-tune on gold+human annotations and swap if dev F1 holds.

        Training happens on a copy; the serving model is replaced only
        under the lock, and only when the new dev score does not regress
        beyond the tolerance.  Failures leave the serving model untouched.
        """
        with self._lock:
            if self.model is None:
                raise StoreError("no_model", "project has no serving model")
            if self.decisions_since_retrain < min_new_decisions:
                raise StoreError(
                    "insufficient_new_data",
                    f"need {min_new_decisions} new decisions, "
                    f"have {self.decisions_since_retrain}",
                )
            corpus = self.corpus
            current = self.model
        config = config if config is not None else TrainConfig(epochs=10)
        before_f1 = dev_lenient_f1(current, corpus)
        tuned, history = fine_tune(current, corpus, config)
        after_f1 = dev_lenient_f1(tuned, corpus)
        swapped = after_f1 >= before_f1 - regression_tolerance
        with self._lock:
            if swapped:
                self.model = tuned
                self.decisions_since_retrain = 0
                tuned.save(self.directory / f"model-{tuned.version}.bin")
        return {
            "swapped": swapped,
            "model_version": self.model.version,
            "candidate_version": tuned.version,
            "dev_f1_before": before_f1,
            "dev_f1_after": after_f1,
            "reason": None
            if swapped
            else (
                f"dev lenient micro-F1 regressed {before_f1 - after_f1:.4f} "
                f"> tolerance {regression_tolerance}"
            ),
            "epochs_run": len(history),
        }

    # -- statistics ---------------------------------------------------------------

    def stats(self) -> dict:
        with self._lock:
            per_provenance: dict[str, int] = {p.value: 0 for p in Provenance}
            per_label: dict[str, dict[str, int]] = {
                p.value: {l.value: 0 for l in Label} for p in Provenance
            }
            annotators: dict[str, dict[str, AnnotationSet]] = {}
            for key, ann in self.corpus.annotations.items():
                per_provenance[ann.provenance.value] += len(ann.spans)
                for span in ann.spans:
                    per_label[ann.provenance.value][span.label.value] += 1
                if ann.provenance is Provenance.HUMAN and ann.annotator_id:
                    annotators.setdefault(ann.annotator_id, {})[ann.doc_id] = ann
            pairwise = []
            names = sorted(annotators)
            for i, a in enumerate(names):
                for b in names[i + 1 :]:
                    shared = sorted(set(annotators[a]) & set(annotators[b]))
                    if not shared:
                        continue
                    result = iaa_op(
                        {d: annotators[a][d] for d in shared},
                        {d: annotators[b][d] for d in shared},
                    )
                    pairwise.append(
                        {
                            "annotator_a": a,
                            "annotator_b": b,
                            "documents": len(shared),
                            "lenient_micro_f1": result.report.micro.f1,
                            "lenient_macro_f1": result.report.macro.f1,
                            "per_label_f1": {
                                l.value: result.report.per_label[l].f1 for l in Label
                            },
                        }
                    )
            note = None
            if len(names) < 2:
                note = "pairwise agreement needs at least two annotators"
            return {
                "project_id": self.project_id,
                "documents": len(self.corpus.documents),
                "decisions": len(self.decided),
                "decisions_since_retrain": self.decisions_since_retrain,
                "model_version": self.model.version if self.model else None,
                "spans_per_provenance": per_provenance,
                "labels_per_provenance": per_label,
                "pairwise_iaa": pairwise,
                "iaa_note": note,
            }

    def export(self) -> tuple[str, str]:
        """Corpus files (documents, annotations) as ndjson strings."""
        with self._lock:
            tmp_docs = self.directory / ".export_docs.jsonl"
            tmp_ann = self.directory / ".export_ann.jsonl"
            save_corpus(self.corpus, tmp_docs, tmp_ann)
            docs = tmp_docs.read_text(encoding="utf-8")
            ann = tmp_ann.read_text(encoding="utf-8")
            tmp_docs.unlink()
            tmp_ann.unlink()
            return docs, ann
