"""HTTP annotation service: ranked queues, agreement resolution, refits.

State is an append-only JSONL log of annotation events (plus periodic
snapshots); every derived quantity — task status, resolved labels,
agreement rate — is a deterministic fold over that log, so replay after a
crash reconstructs identical state.  Leases are in-memory only: a served
task is reserved per (document, worker) for a timeout and silently
returns to the pool when it expires.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from .corpus import Corpus
from .harness import fit_and_predict
from .mnir import PenaltyConfig, SentimentScale

ALL_SUBJECTS = "_all"


class AnnotationIn(BaseModel):
    """POST /annotations request body."""

    doc_id: str
    worker_id: str
    label: float


class ServiceError(Exception):
    status_code = 400


class UnknownSubjectError(ServiceError):
    status_code = 404


class UnknownTaskError(ServiceError):
    status_code = 404


class DuplicateAnnotationError(ServiceError):
    status_code = 409


class TaskFinalizedError(ServiceError):
    status_code = 409


class OffScaleLabelError(ServiceError):
    status_code = 422


class NothingResolvedError(ServiceError):
    status_code = 400


@dataclass(frozen=True)
class Annotation:
    doc_id: str
    worker_id: str
    label: float
    timestamp: float


@dataclass(frozen=True)
class Task:
    doc_id: str
    subject: str | None
    text: str
    rank: int
    status: str


@dataclass(frozen=True)
class StoreConfig:
    """Agreement policy "discard" drops disagreements; "third_vote" asks a
    third worker and takes the majority (three distinct labels discard)."""

    policy: str = "discard"
    lease_timeout: float = 600.0
    snapshot_every: int = 100

    def __post_init__(self):
        if self.policy not in ("discard", "third_vote"):
            raise ValueError(f"unknown agreement policy {self.policy!r}")


@dataclass(frozen=True)
class RefitPoint:
    subject: str
    size: int
    nonzero_subject_loadings: int
    mean_entropy: float


@dataclass
class _DocState:
    annotations: list[Annotation] = field(default_factory=list)

    def workers(self) -> set[str]:
        return {a.worker_id for a in self.annotations}


def _resolve(labels: list[float], policy: str) -> tuple[str, float | None]:
    """Fold an ordered label list into (status, final label).

    status is one of pending / resolved / discarded; only the first two
    votes (plus a third under "third_vote") ever count.
    """
    if len(labels) < 2:
        return "pending", None
    if labels[0] == labels[1]:
        return "resolved", labels[0]
    if policy == "discard":
        return "discarded", None
    if len(labels) < 3:
        return "pending", None
    counts: dict[float, int] = {}
    for lab in labels[:3]:
        counts[lab] = counts.get(lab, 0) + 1
    best = max(counts.values())
    if best >= 2:
        winner = next(lab for lab, c in counts.items() if c == best)
        return "resolved", winner
    return "discarded", None


class AnnotationStore:
    """Durable annotation state over a ranked document pool.

    ``ranking`` is an ordered list of doc_ids (rank 1 first).  All reads
    and writes are serialized through one lock; the log is flushed before
    a submit returns.
    """

    def __init__(
        self,
        corpus: Corpus,
        ranking: list[str],
        store_dir,
        scale: SentimentScale | None = None,
        config: StoreConfig | None = None,
        penalty: PenaltyConfig | None = None,
        clock=time.time,
    ):
        self.corpus = corpus
        self.scale = scale or SentimentScale()
        self.config = config or StoreConfig()
        self.penalty = penalty
        self.clock = clock
        self._lock = threading.RLock()
        self._row_of = {doc_id: i for i, doc_id in enumerate(corpus.doc_ids)}
        unknown = [d for d in ranking if d not in self._row_of]
        if unknown:
            raise ValueError(f"ranking references unknown document {unknown[0]!r}")
        self.ranking = list(ranking)
        self._rank_of = {doc_id: r for r, doc_id in enumerate(self.ranking, start=1)}
        self._docs: dict[str, _DocState] = {}
        self._leases: dict[str, dict[str, float]] = {}
        self._refit_points: list[RefitPoint] = []
        self._events_applied = 0

        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self._log_path = self.store_dir / "events.jsonl"
        self._snapshot_path = self.store_dir / "snapshot.json"
        self._log_fh = None
        self._load()
        self._log_fh = open(self._log_path, "a", encoding="utf-8")

    # ----- persistence -----

    def _load(self) -> None:
        start = 0
        if self._snapshot_path.exists():
            with open(self._snapshot_path, "r", encoding="utf-8") as fh:
                snap = json.load(fh)
            start = int(snap["events_applied"])
            for rec in snap["events"]:
                self._apply_event(rec)
        if self._log_path.exists():
            with open(self._log_path, "r", encoding="utf-8") as fh:
                for i, line in enumerate(fh):
                    if i < start or not line.strip():
                        continue
                    self._apply_event(json.loads(line))

    def _snapshot(self) -> None:
        events = []
        for doc_id in sorted(self._docs):
            for a in self._docs[doc_id].annotations:
                events.append(self._annotation_event(a))
        for pt in self._refit_points:
            events.append(self._refit_event(pt))
        tmp = self._snapshot_path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump({"events_applied": self._events_applied, "events": events}, fh)
        tmp.replace(self._snapshot_path)

    @staticmethod
    def _annotation_event(a: Annotation) -> dict:
        return {
            "type": "annotation",
            "doc_id": a.doc_id,
            "worker_id": a.worker_id,
            "label": a.label,
            "timestamp": a.timestamp,
        }

    @staticmethod
    def _refit_event(pt: RefitPoint) -> dict:
        return {
            "type": "refit",
            "subject": pt.subject,
            "size": pt.size,
            "nonzero_subject_loadings": pt.nonzero_subject_loadings,
            "mean_entropy": pt.mean_entropy,
        }

    def _apply_event(self, rec: dict) -> None:
        if rec["type"] == "annotation":
            a = Annotation(
                doc_id=str(rec["doc_id"]),
                worker_id=str(rec["worker_id"]),
                label=float(rec["label"]),
                timestamp=float(rec["timestamp"]),
            )
            self._docs.setdefault(a.doc_id, _DocState()).annotations.append(a)
        elif rec["type"] == "refit":
            self._refit_points.append(
                RefitPoint(
                    subject=str(rec["subject"]),
                    size=int(rec["size"]),
                    nonzero_subject_loadings=int(rec["nonzero_subject_loadings"]),
                    mean_entropy=float(rec["mean_entropy"]),
                )
            )
        self._events_applied += 1

    def _append_event(self, rec: dict) -> None:
        self._log_fh.write(json.dumps(rec) + "\n")
        self._log_fh.flush()
        self._apply_event(rec)
        if self._events_applied % self.config.snapshot_every == 0:
            self._snapshot()

    def close(self) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    # ----- derived state -----

    def _labels_of(self, doc_id: str) -> list[float]:
        state = self._docs.get(doc_id)
        return [a.label for a in state.annotations] if state else []

    def resolution(self, doc_id: str) -> tuple[str, float | None]:
        return _resolve(self._labels_of(doc_id), self.config.policy)

    def _needed(self, doc_id: str) -> int:
        labels = self._labels_of(doc_id)
        if self.config.policy == "third_vote" and len(labels) >= 2 and labels[0] != labels[1]:
            return 3
        return 2

    def _active_leases(self, doc_id: str, now: float) -> dict[str, float]:
        holders = self._leases.get(doc_id, {})
        live = {w: t for w, t in holders.items() if t > now}
        if live:
            self._leases[doc_id] = live
        else:
            self._leases.pop(doc_id, None)
        return live

    def task_status(self, doc_id: str, now: float | None = None) -> str:
        status, _ = self.resolution(doc_id)
        if status != "pending":
            return status
        now = self.clock() if now is None else now
        if self._labels_of(doc_id) or self._active_leases(doc_id, now):
            return "in_progress"
        return "pending"

    def _subject_rows(self, subject: str) -> list[int]:
        if subject == ALL_SUBJECTS:
            return list(range(self.corpus.n))
        rows = [i for i, s in enumerate(self.corpus.subjects) if s == subject]
        if not rows:
            raise UnknownSubjectError(f"unknown subject {subject!r}")
        return rows

    def _queue_doc_ids(self, subject: str) -> list[str]:
        rows = set(self._subject_rows(subject))
        return [d for d in self.ranking if self._row_of[d] in rows]

    def _task(self, doc_id: str, now: float) -> Task:
        row = self._row_of[doc_id]
        text = self.corpus.texts[row] if self.corpus.texts is not None else ""
        return Task(
            doc_id=doc_id,
            subject=self.corpus.subjects[row],
            text=text,
            rank=self._rank_of[doc_id],
            status=self.task_status(doc_id, now),
        )

    # ----- operations -----

    def next_tasks(self, subject: str, count: int, worker_id: str) -> list[Task]:
        """Lowest-rank open tasks this worker may still annotate.

        A task is served while (annotations + other workers' live leases)
        leave room under the votes needed; serving renews this worker's
        lease.
        """
        if count < 0:
            raise ServiceError("count must be >= 0")
        if not worker_id:
            raise ServiceError("worker_id must be nonempty")
        with self._lock:
            now = self.clock()
            out: list[Task] = []
            for doc_id in self._queue_doc_ids(subject):
                if len(out) >= count:
                    break
                status, _ = self.resolution(doc_id)
                if status != "pending":
                    continue
                state = self._docs.get(doc_id)
                if state and worker_id in state.workers():
                    continue
                leases = self._active_leases(doc_id, now)
                holds = worker_id in leases
                others = sum(1 for w in leases if w != worker_id)
                votes = len(self._labels_of(doc_id))
                if not holds and votes + others >= self._needed(doc_id):
                    continue
                self._leases.setdefault(doc_id, {})[worker_id] = (
                    now + self.config.lease_timeout
                )
                out.append(self._task(doc_id, now))
            return out

    def submit_annotation(self, doc_id: str, worker_id: str, label: float):
        """Record one vote; returns (outcome, final label or None)."""
        with self._lock:
            if doc_id not in self._row_of:
                raise UnknownTaskError(f"unknown document {doc_id!r}")
            if float(label) not in self.scale:
                raise OffScaleLabelError(f"label {label!r} is off the scale")
            status, _ = self.resolution(doc_id)
            if status == "resolved":
                raise TaskFinalizedError(f"document {doc_id!r} is already resolved")
            if status == "discarded":
                raise TaskFinalizedError(f"document {doc_id!r} was discarded")
            state = self._docs.get(doc_id)
            if state and worker_id in state.workers():
                raise DuplicateAnnotationError(
                    f"worker {worker_id!r} already annotated {doc_id!r}"
                )
            self._append_event(
                {
                    "type": "annotation",
                    "doc_id": doc_id,
                    "worker_id": worker_id,
                    "label": float(label),
                    "timestamp": self.clock(),
                }
            )
            self._leases.get(doc_id, {}).pop(worker_id, None)
            return self.resolution(doc_id)

    def resolved_labels(self, subject: str = ALL_SUBJECTS) -> dict[str, float]:
        with self._lock:
            rows = set(self._subject_rows(subject))
            out = {}
            for doc_id in self._docs:
                if self._row_of.get(doc_id) not in rows:
                    continue
                status, label = self.resolution(doc_id)
                if status == "resolved":
                    out[doc_id] = label
            return out

    def status(self, subject: str = ALL_SUBJECTS) -> dict:
        """Queue counts, agreement rate, annotation volume, refit series."""
        with self._lock:
            now = self.clock()
            counts = {"pending": 0, "in_progress": 0, "resolved": 0, "discarded": 0}
            twice = 0
            first_two_agree = 0
            annotations = 0
            for doc_id in self._queue_doc_ids(subject):
                counts[self.task_status(doc_id, now)] += 1
                labels = self._labels_of(doc_id)
                annotations += len(labels)
                if len(labels) >= 2:
                    twice += 1
                    first_two_agree += labels[0] == labels[1]
            points = [
                self._refit_event(pt)
                for pt in self._refit_points
                if pt.subject == subject
            ]
            return {
                "subject": subject,
                "counts": counts,
                "annotations": annotations,
                "agreement_rate": (first_two_agree / twice) if twice else None,
                "refit_points": points,
            }

    def refit(self, subject: str = ALL_SUBJECTS) -> RefitPoint:
        """Refit inverse + forward models on every resolved label.

        The fit is joint across subjects (subject blocks model deviations
        from the shared direction); the returned point reports the queried
        subject's block sparsity and the pool-wide mean entropy.  The
        heavy computation runs outside the lock on a snapshot of the
        resolved set; the new point is appended atomically afterwards.
        """
        self._subject_rows(subject)  # validate before computing
        with self._lock:
            resolved = self.resolved_labels(ALL_SUBJECTS)
            if not resolved:
                raise NothingResolvedError("no resolved labels")
            rows = sorted(self._row_of[d] for d in resolved)
            labels = [None] * self.corpus.n
            for d, label in resolved.items():
                labels[self._row_of[d]] = label

        relabeled = self.corpus.with_labels(labels)
        sub_labels = [relabeled.labels[i] for i in rows]
        if len(set(sub_labels)) < 2:
            raise NothingResolvedError("resolved labels contain a single class")
        with_subjects = any(s is not None for s in self.corpus.subjects)
        _, entropy, mnir_model, _ = fit_and_predict(
            relabeled, rows, self.scale, penalty=self.penalty,
            interactions=with_subjects,
        )
        if subject != ALL_SUBJECTS and with_subjects:
            row = mnir_model.row_for_subject(subject)
            nonzero = int(np.count_nonzero(mnir_model.phi[row])) if row > 0 else 0
        else:
            nonzero = int(np.count_nonzero(mnir_model.phi[0]))
        point = RefitPoint(
            subject=subject,
            size=len(rows),
            nonzero_subject_loadings=nonzero,
            mean_entropy=float(entropy.mean()),
        )
        with self._lock:
            self._append_event(self._refit_event(point))
        return point


def create_app(store: AnnotationStore, ui_dir=None):
    """FastAPI wiring over an AnnotationStore.

    Endpoints: GET /queue/{subject}, POST /annotations,
    GET /status/{subject}, POST /refit/{subject}.  ``ui_dir`` (a built
    static bundle) is mounted at the web root when given.
    """
    from fastapi import FastAPI, HTTPException, Query

    app = FastAPI(title="annodesign annotation service")

    def guard(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ServiceError as exc:
            raise HTTPException(status_code=exc.status_code, detail=str(exc))

    @app.get("/queue/{subject}")
    def queue(subject: str, worker: str = Query(...), count: int = Query(1)):
        tasks = guard(store.next_tasks, subject, count, worker)
        return [
            {
                "doc_id": t.doc_id,
                "subject": t.subject,
                "text": t.text,
                "rank": t.rank,
                "status": t.status,
            }
            for t in tasks
        ]

    @app.post("/annotations")
    def annotate(body: AnnotationIn):
        status, label = guard(
            store.submit_annotation, body.doc_id, body.worker_id, body.label
        )
        outcome = status if status in ("resolved", "discarded") else "pending"
        return {"outcome": outcome, "label": label}

    @app.get("/status/{subject}")
    def status(subject: str):
        return guard(store.status, subject)

    @app.post("/refit/{subject}")
    def refit(subject: str):
        point = guard(store.refit, subject)
        return store._refit_event(point)

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
