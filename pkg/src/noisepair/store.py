"""Append-only candidate-event store.

Every mutation is one JSON line appended to the log; replaying the log
reconstructs the state exactly, which gives the audit trail the review
workflow needs. All writes funnel through a single lock (single writer);
reads work on the in-memory state.
"""

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

PENDING = "pending"
CONFIRMED = "confirmed"
REJECTED = "rejected"
STATUSES = (PENDING, CONFIRMED, REJECTED)


class StoreError(Exception):
    pass


class NotFoundError(StoreError):
    def __init__(self, candidate_id: str):
        super().__init__(f"not found: {candidate_id}")


class AlreadyReviewedError(StoreError):
    def __init__(self, candidate_id: str):
        super().__init__(f"already reviewed: {candidate_id}")


@dataclass
class CandidateEvent:
    """A fused window proposed for human review."""

    id: str
    window_start_s: float
    score: float
    branch: str
    source_device: str
    receiver_device: str
    review_status: str = PENDING
    reviewer_note: str | None = None
    created_at: float = 0.0
    reviewed_at: float | None = None
    lag_s: float | None = None
    context: dict | None = None

    def summary(self) -> dict:
        """Everything except the bulky display context."""
        return {
            "id": self.id,
            "window_start_s": self.window_start_s,
            "score": self.score,
            "branch": self.branch,
            "source_device": self.source_device,
            "receiver_device": self.receiver_device,
            "review_status": self.review_status,
            "reviewer_note": self.reviewer_note,
            "created_at": self.created_at,
            "reviewed_at": self.reviewed_at,
            "lag_s": self.lag_s,
        }


def _candidate_from_record(rec: dict) -> CandidateEvent:
    return CandidateEvent(
        id=rec["id"],
        window_start_s=rec["window_start_s"],
        score=rec["score"],
        branch=rec["branch"],
        source_device=rec["source_device"],
        receiver_device=rec["receiver_device"],
        created_at=rec["created_at"],
        lag_s=rec.get("lag_s"),
        context=rec.get("context"),
    )


class EventStore:
    """File-backed store; the file is the source of truth.

    Candidate records are immutable once appended; review transitions are
    separate records applied in order, so later records supersede earlier
    state per id and a replay reproduces the current state.
    """

    def __init__(self, path, now_fn=time.time):
        self.path = Path(path)
        self.now_fn = now_fn
        self._lock = threading.Lock()
        self._events: dict[str, CandidateEvent] = {}
        if self.path.exists():
            self._replay()

    def _replay(self) -> None:
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec["type"] == "candidate":
                    ev = _candidate_from_record(rec["event"])
                    self._events[ev.id] = ev
                elif rec["type"] == "review":
                    ev = self._events[rec["id"]]
                    ev.review_status = rec["decision"]
                    ev.reviewer_note = rec.get("note")
                    ev.reviewed_at = rec["reviewed_at"]

    def _append(self, rec: dict) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec) + "\n")
            fh.flush()

    def add_candidate(self, event: CandidateEvent) -> bool:
        """Append a new candidate; a known id is a no-op (idempotent runs)."""
        with self._lock:
            if event.id in self._events:
                return False
            if event.created_at == 0.0:
                event.created_at = self.now_fn()
            record = {"type": "candidate",
                      "event": {**event.summary(), "context": event.context}}
            self._append(record)
            self._events[event.id] = event
            return True

    def review(self, candidate_id: str, decision: str, note: str | None = None) -> CandidateEvent:
        """pending -> confirmed|rejected, recorded append-only; first write wins."""
        decision = {"confirm": CONFIRMED, "reject": REJECTED}.get(decision, decision)
        if decision not in (CONFIRMED, REJECTED):
            raise ValueError(f"decision must be one of confirmed|rejected, got {decision!r}")
        with self._lock:
            ev = self._events.get(candidate_id)
            if ev is None:
                raise NotFoundError(candidate_id)
            if ev.review_status != PENDING:
                raise AlreadyReviewedError(candidate_id)
            reviewed_at = self.now_fn()
            self._append({
                "type": "review",
                "id": candidate_id,
                "decision": decision,
                "note": note,
                "reviewed_at": reviewed_at,
            })
            ev.review_status = decision
            ev.reviewer_note = note
            ev.reviewed_at = reviewed_at
            return ev

    def get(self, candidate_id: str) -> CandidateEvent:
        ev = self._events.get(candidate_id)
        if ev is None:
            raise NotFoundError(candidate_id)
        return ev

    def list(self, status: str | None = None) -> list[CandidateEvent]:
        events = self._events.values()
        if status is not None:
            if status not in STATUSES:
                raise ValueError(f"unknown status {status!r}")
            events = [e for e in events if e.review_status == status]
        return sorted(events, key=lambda e: (e.window_start_s, e.id))

    def summary(self) -> dict:
        counts = {s: 0 for s in STATUSES}
        for e in self._events.values():
            counts[e.review_status] += 1
        counts["total"] = len(self._events)
        return counts

    def canonical_state(self) -> str:
        """Deterministic serialization of the current state, for audits."""
        events = [self._events[k].summary() for k in sorted(self._events)]
        return json.dumps(events, sort_keys=True)
