"""Append-oriented persistence for events, scores, alerts, feedback, profiles.

Events land in time-ordered append-only JSONL segments with an in-memory
per-user secondary index (timestamp, sequence, segment, offset); sealed
segments carry a sha256 sidecar checked by ``verify``. Acknowledged appends
are flushed and fsynced before return, so a crash after return loses nothing;
a torn trailing line from an unacknowledged write is discarded on reopen.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .airs import FeedbackRecord, RiskProfile
from .errors import (
    IllegalTransition,
    InvalidRange,
    MissingFeedback,
    StorageFull,
)
from .events import ActivityEvent, Session
from .prism import Band, FactorBreakdown, RiskScore, Scorer

SEGMENT_MAX_ROWS = 100_000


class AlertStatus(str, Enum):
    OPEN = "Open"
    ACKNOWLEDGED = "Acknowledged"
    RESOLVED = "Resolved"
    REJECTED = "Rejected"


class AlertOrigin(str, Enum):
    POLICY_VIOLATION = "PolicyViolation"
    SCORE_THRESHOLD = "ScoreThreshold"
    CUMULATIVE_RISK = "CumulativeRisk"


LEGAL_TRANSITIONS: dict[AlertStatus, set[AlertStatus]] = {
    AlertStatus.OPEN: {AlertStatus.ACKNOWLEDGED, AlertStatus.RESOLVED, AlertStatus.REJECTED},
    AlertStatus.ACKNOWLEDGED: {AlertStatus.RESOLVED, AlertStatus.REJECTED},
    AlertStatus.RESOLVED: set(),
    AlertStatus.REJECTED: set(),
}


@dataclass
class Alert:
    alert_id: str
    created_at: datetime
    subject: str
    origin: AlertOrigin
    origin_ref: str
    risk_score: Optional[RiskScore] = None
    status: AlertStatus = AlertStatus.OPEN
    severity: str = "Medium"
    recommendation: Optional[str] = None
    feedback_ref: Optional[str] = None
    s_ai: Optional[float] = None
    feature_vector: Optional[list[float]] = None
    tag: str = ""

    @classmethod
    def build(
        cls,
        created_at: datetime,
        subject: str,
        origin: AlertOrigin,
        origin_ref: str,
        **kwargs,
    ) -> "Alert":
        key = f"{origin.value}|{origin_ref}|{subject}|{created_at.isoformat()}"
        alert_id = "A-" + hashlib.sha1(key.encode()).hexdigest()[:12]
        return cls(
            alert_id=alert_id,
            created_at=created_at,
            subject=subject,
            origin=origin,
            origin_ref=origin_ref,
            **kwargs,
        )

    @property
    def score_value(self) -> float:
        if self.s_ai is not None:
            return self.s_ai
        if self.risk_score is not None:
            return self.risk_score.normalized
        return 0.0

    def to_dict(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "created_at": self.created_at.strftime("%Y-%m-%dT%H:%M:%S"),
            "subject": self.subject,
            "origin": self.origin.value,
            "origin_ref": self.origin_ref,
            "risk_score": self.risk_score.to_dict() if self.risk_score else None,
            "status": self.status.value,
            "severity": self.severity,
            "recommendation": self.recommendation,
            "feedback_ref": self.feedback_ref,
            "s_ai": self.s_ai,
            "feature_vector": self.feature_vector,
            "tag": self.tag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Alert":
        rs = d.get("risk_score")
        risk_score = None
        if rs:
            risk_score = RiskScore(
                raw=rs["raw"],
                normalized=rs["normalized"],
                band=Band(rs["band"]),
                scorer=Scorer(rs["scorer"]),
                breakdown=FactorBreakdown.from_dict(rs.get("breakdown", {})),
                subject=rs.get("subject", ""),
            )
        return cls(
            alert_id=d["alert_id"],
            created_at=datetime.strptime(d["created_at"], "%Y-%m-%dT%H:%M:%S").replace(tzinfo=timezone.utc),
            subject=d["subject"],
            origin=AlertOrigin(d["origin"]),
            origin_ref=d["origin_ref"],
            risk_score=risk_score,
            status=AlertStatus(d["status"]),
            severity=d.get("severity", "Medium"),
            recommendation=d.get("recommendation"),
            feedback_ref=d.get("feedback_ref"),
            s_ai=d.get("s_ai"),
            feature_vector=d.get("feature_vector"),
            tag=d.get("tag", ""),
        )


@dataclass
class StoreStats:
    event_count: int = 0
    session_count: int = 0
    violation_count: int = 0
    alerts_by_status: dict[str, int] = field(default_factory=dict)
    alerts_by_severity: dict[str, int] = field(default_factory=dict)
    ingest_rate_eps: float = 0.0
    query_latency_ms: dict[str, float] = field(default_factory=dict)
    query_count: int = 0

    def to_dict(self) -> dict:
        return {
            "event_count": self.event_count,
            "session_count": self.session_count,
            "violation_count": self.violation_count,
            "alerts_by_status": self.alerts_by_status,
            "alerts_by_severity": self.alerts_by_severity,
            "ingest_rate_eps": self.ingest_rate_eps,
            "query_latency_ms": self.query_latency_ms,
            "query_count": self.query_count,
        }


def _percentile(sorted_values: list[float], q: float) -> float:
    if not sorted_values:
        return 0.0
    idx = min(len(sorted_values) - 1, max(0, int(round(q * (len(sorted_values) - 1)))))
    return sorted_values[idx]


class LineCodec:
    """Hook for at-rest encoding of stored lines; must emit newline-free bytes."""

    def encode(self, line: bytes) -> bytes:
        return line

    def decode(self, line: bytes) -> bytes:
        return line


class FernetCodec(LineCodec):
    """Symmetric encryption-at-rest via cryptography's Fernet tokens."""

    def __init__(self, key: str | bytes):
        from cryptography.fernet import Fernet

        self._fernet = Fernet(key)

    def encode(self, line: bytes) -> bytes:
        return self._fernet.encrypt(line)

    def decode(self, line: bytes) -> bytes:
        from cryptography.fernet import InvalidToken

        try:
            return self._fernet.decrypt(line)
        except InvalidToken as exc:
            raise ValueError("undecryptable line") from exc


class _JsonlLog:
    """Append-only JSONL file with flush+fsync per append batch."""

    def __init__(self, path: Path, fsync: bool, codec: LineCodec | None = None):
        self.path = path
        self._fsync = fsync
        self._codec = codec or LineCodec()

        self._fh = None

    def replay(self) -> Iterator[dict]:
        if not self.path.exists():
            return
        with open(self.path, "rb") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(self._codec.decode(line))
                except (json.JSONDecodeError, ValueError):
                    continue  # torn trailing line from an interrupted write

    def append(self, doc: dict) -> None:
        if self._fh is None:
            self._fh = open(self.path, "ab")
        payload = json.dumps(doc, separators=(",", ":")).encode()
        self._fh.write(self._codec.encode(payload) + b"\n")
        self._fh.flush()
        if self._fsync:
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class RiskStore:
    """Single-writer, many-reader store rooted at a data directory."""

    def __init__(
        self,
        data_dir: str | Path,
        fsync: bool = True,
        segment_max_rows: int = SEGMENT_MAX_ROWS,
        codec: LineCodec | None = None,
    ):
        self.data_dir = Path(data_dir)
        self.events_dir = self.data_dir / "events"
        self.events_dir.mkdir(parents=True, exist_ok=True)
        self._fsync = fsync
        self._segment_max_rows = segment_max_rows
        self._codec = codec or LineCodec()
        self._lock = threading.RLock()

        self._segments: list[Path] = []
        self._active_fh = None
        self._active_rows = 0
        self._event_ids: set[str] = set()
        self._seq = 0
        # user -> list of (ts_epoch, seq, segment_idx, offset), sorted lazily
        self._user_index: dict[str, list[tuple[int, int, int, int]]] = {}
        self._dirty_users: set[str] = set()

        self._sessions: dict[str, Session] = {}
        self._scores: dict[str, dict] = {}
        self._violations: dict[str, dict] = {}
        self._actions: dict[str, dict] = {}
        self._alerts: dict[str, Alert] = {}
        self._feedback: dict[str, FeedbackRecord] = {}
        self._profiles: dict[str, RiskProfile] = {}

        self._latencies_ms: list[float] = []
        self._ingest_marks: list[tuple[float, int]] = []

        self._logs = {
            name: _JsonlLog(self.data_dir / f"{name}.jsonl", fsync, self._codec)
            for name in ("sessions", "scores", "violations", "actions", "alerts", "alert_audit", "feedback", "profiles")
        }
        self._open_existing()

    # -- startup ------------------------------------------------------------

    def _open_existing(self) -> None:
        self._segments = sorted(self.events_dir.glob("seg-*.jsonl"))
        for seg_idx, seg in enumerate(self._segments):
            self._scan_segment(seg, seg_idx)
        if self._segments:
            self._active_rows = self._count_rows(self._segments[-1])
        for doc in self._logs["sessions"].replay():
            self._sessions[doc["session_id"]] = _session_from_dict(doc)
        for doc in self._logs["scores"].replay():
            self._scores[doc["subject"]] = doc
        for doc in self._logs["violations"].replay():
            self._violations[doc["violation_id"]] = doc
        for doc in self._logs["actions"].replay():
            self._actions[doc["violation_id"]] = doc
        for doc in self._logs["alerts"].replay():
            self._alerts[doc["alert_id"]] = Alert.from_dict(doc)
        for doc in self._logs["feedback"].replay():
            if doc.get("op") == "consume":
                for fid in doc["ids"]:
                    if fid in self._feedback:
                        self._feedback[fid].consumed_in_retrain = True
            else:
                rec = FeedbackRecord.from_dict(doc)
                self._feedback[rec.feedback_id] = rec
        for doc in self._logs["profiles"].replay():
            prof = RiskProfile.from_dict(doc)
            self._profiles[prof.user_id] = prof

    def _scan_segment(self, seg: Path, seg_idx: int) -> None:
        offset = 0
        with open(seg, "rb") as fh:
            for raw in fh:
                if not raw.endswith(b"\n"):
                    break  # torn trailing write; never acknowledged
                try:
                    doc = json.loads(self._codec.decode(raw.rstrip(b"\n")))
                except (json.JSONDecodeError, ValueError):
                    break
                self._register(doc, seg_idx, offset)
                offset += len(raw)

    def _count_rows(self, seg: Path) -> int:
        with open(seg, "rb") as fh:
            return sum(1 for line in fh if line.endswith(b"\n"))

    def _register(self, doc: dict, seg_idx: int, offset: int) -> None:
        event_id = doc["event_id"]
        if event_id in self._event_ids:
            return
        self._event_ids.add(event_id)
        ts = int(datetime.strptime(doc["timestamp"], "%Y-%m-%dT%H:%M:%S").replace(tzinfo=timezone.utc).timestamp())
        entry = (ts, self._seq, seg_idx, offset)
        self._seq += 1
        self._user_index.setdefault(doc["user_id"], []).append(entry)
        self._dirty_users.add(doc["user_id"])

    # -- event segments -----------------------------------------------------

    def _roll_segment(self) -> None:
        if self._active_fh is not None:
            self._active_fh.close()
            self._active_fh = None
            last = self._segments[-1]
            digest = hashlib.sha256(last.read_bytes()).hexdigest()
            last.with_suffix(".sha256").write_text(digest)
        name = self.events_dir / f"seg-{len(self._segments) + 1:06d}.jsonl"
        self._segments.append(name)
        self._active_fh = open(name, "ab")
        self._active_rows = 0

    def _ensure_active(self) -> None:
        if self._active_fh is None:
            if not self._segments or self._active_rows >= self._segment_max_rows:
                self._roll_segment()
            else:
                self._active_fh = open(self._segments[-1], "ab")

    def append_events(self, batch: Sequence[ActivityEvent]) -> dict:
        """Durably append a batch; duplicates by event_id are counted and skipped."""
        accepted = 0
        duplicates = 0
        with self._lock:
            if not batch:
                return {"accepted": 0, "duplicates": 0}
            self._ensure_active()
            seg_idx = len(self._segments) - 1
            fh = self._active_fh
            try:
                for event in batch:
                    if event.event_id in self._event_ids:
                        duplicates += 1
                        continue
                    if self._active_rows >= self._segment_max_rows:
                        fh.flush()
                        if self._fsync:
                            os.fsync(fh.fileno())
                        self._roll_segment()
                        seg_idx = len(self._segments) - 1
                        fh = self._active_fh
                    payload = json.dumps(event.to_dict(), separators=(",", ":")).encode()
                    line = self._codec.encode(payload) + b"\n"
                    offset = fh.tell()
                    fh.write(line)
                    self._active_rows += 1
                    self._event_ids.add(event.event_id)
                    entry = (int(event.timestamp.timestamp()), self._seq, seg_idx, offset)
                    self._seq += 1
                    self._user_index.setdefault(event.user_id, []).append(entry)
                    self._dirty_users.add(event.user_id)
                    accepted += 1
                fh.flush()
                if self._fsync:
                    os.fsync(fh.fileno())
            except OSError as exc:
                if exc.errno == 28:  # ENOSPC
                    raise StorageFull(str(exc)) from exc
                raise
        self._ingest_marks.append((time.monotonic(), accepted))
        if len(self._ingest_marks) > 10_000:
            del self._ingest_marks[:5_000]
        return {"accepted": accepted, "duplicates": duplicates}

    def _sorted_user_entries(self, user_id: str) -> list[tuple[int, int, int, int]]:
        entries = self._user_index.get(user_id, [])
        if user_id in self._dirty_users:
            entries.sort()
            self._dirty_users.discard(user_id)
        return entries

    def query_events(
        self,
        user_id: str,
        start: datetime,
        end: datetime,
        activities: Optional[Iterable[str]] = None,
        limit: Optional[int] = None,
    ) -> list[ActivityEvent]:
        """Timestamp-sorted events for one user in [start, end]."""
        if end < start:
            raise InvalidRange(f"range end {end} before start {start}")
        t0 = time.perf_counter()
        with self._lock:
            entries = self._sorted_user_entries(user_id)
            lo = bisect.bisect_left(entries, (int(start.timestamp()), -1, -1, -1))
            hi = bisect.bisect_right(entries, (int(end.timestamp()), 1 << 60, 0, 0))
            selected = entries[lo:hi]
        wanted = {a if isinstance(a, str) else a.value for a in activities} if activities else None
        out: list[ActivityEvent] = []
        handles: dict[int, object] = {}
        try:
            for ts, seq, seg_idx, offset in selected:
                fh = handles.get(seg_idx)
                if fh is None:
                    fh = open(self._segments[seg_idx], "rb")
                    handles[seg_idx] = fh
                fh.seek(offset)
                doc = json.loads(self._codec.decode(fh.readline().rstrip(b"\n")))
                if wanted is not None and doc["activity"] not in wanted:
                    continue
                out.append(ActivityEvent.from_dict(doc))
                if limit is not None and len(out) >= limit:
                    break
        finally:
            for fh in handles.values():
                fh.close()
        self._latencies_ms.append((time.perf_counter() - t0) * 1000.0)
        return out

    def iter_events(self) -> Iterator[ActivityEvent]:
        for seg in self._segments:
            with open(seg, "rb") as fh:
                for raw in fh:
                    if not raw.endswith(b"\n"):
                        break
                    yield ActivityEvent.from_dict(json.loads(self._codec.decode(raw.rstrip(b"\n"))))

    @property
    def event_count(self) -> int:
        return len(self._event_ids)

    def has_event(self, event_id: str) -> bool:
        return event_id in self._event_ids

    def close(self) -> None:
        with self._lock:
            if self._active_fh is not None:
                self._active_fh.close()
                self._active_fh = None
            for log in self._logs.values():
                log.close()

    def verify(self) -> dict:
        """Check sealed-segment checksums and line integrity of the active segment."""
        report = {"segments_checked": 0, "corrupt": []}
        for seg in self._segments:
            report["segments_checked"] += 1
            sidecar = seg.with_suffix(".sha256")
            if sidecar.exists():
                digest = hashlib.sha256(seg.read_bytes()).hexdigest()
                if digest != sidecar.read_text().strip():
                    report["corrupt"].append(str(seg))
                continue
            with open(seg, "rb") as fh:
                for raw in fh:
                    if not raw.endswith(b"\n"):
                        break
                    try:
                        json.loads(self._codec.decode(raw.rstrip(b"\n")))
                    except (json.JSONDecodeError, ValueError):
                        report["corrupt"].append(str(seg))
                        break
        return report

    # -- sessions / scores / violations --------------------------------------

    def put_session(self, session: Session) -> None:
        with self._lock:
            self._sessions[session.session_id] = session
            self._logs["sessions"].append(_session_to_dict(session))

    def get_session(self, session_id: str) -> Optional[Session]:
        return self._sessions.get(session_id)

    def sessions(self) -> list[Session]:
        return list(self._sessions.values())

    def put_score(self, score_doc: dict) -> None:
        with self._lock:
            self._scores[score_doc["subject"]] = score_doc
            self._logs["scores"].append(score_doc)

    def get_score(self, subject: str) -> Optional[dict]:
        return self._scores.get(subject)

    def scores(self) -> list[dict]:
        return list(self._scores.values())

    def put_violation(self, violation_doc: dict) -> None:
        with self._lock:
            self._violations[violation_doc["violation_id"]] = violation_doc
            self._logs["violations"].append(violation_doc)

    def violations(self) -> list[dict]:
        return list(self._violations.values())

    def put_action(self, action_doc: dict) -> None:
        with self._lock:
            self._actions[action_doc["violation_id"]] = action_doc
            self._logs["actions"].append(action_doc)

    def has_action(self, violation_id: str) -> bool:
        return violation_id in self._actions

    # -- alerts ---------------------------------------------------------------

    def upsert_alert(self, alert: Alert) -> Alert:
        with self._lock:
            self._alerts[alert.alert_id] = alert
            self._logs["alerts"].append(alert.to_dict())
        return alert

    def get_alert(self, alert_id: str) -> Optional[Alert]:
        return self._alerts.get(alert_id)

    def alerts(
        self,
        status: Optional[AlertStatus] = None,
        severity: Optional[str] = None,
        user: Optional[str] = None,
    ) -> list[Alert]:
        out = list(self._alerts.values())
        if status is not None:
            out = [a for a in out if a.status is status]
        if severity is not None:
            out = [a for a in out if a.severity == severity]
        if user is not None:
            out = [a for a in out if a.subject == user]
        out.sort(key=lambda a: (a.created_at, a.alert_id))
        return out

    def transition_alert(
        self,
        alert_id: str,
        new_status: AlertStatus,
        note: str = "",
        feedback_ref: Optional[str] = None,
        at: Optional[datetime] = None,
    ) -> Alert:
        with self._lock:
            alert = self._alerts.get(alert_id)
            if alert is None:
                from .errors import AlertNotFound

                raise AlertNotFound(alert_id)
            if new_status not in LEGAL_TRANSITIONS[alert.status]:
                raise IllegalTransition(f"{alert.status.value} -> {new_status.value}")
            if new_status is AlertStatus.REJECTED and not (feedback_ref or alert.feedback_ref):
                raise MissingFeedback("rejection requires an attached feedback record")
            previous = alert.status
            alert.status = new_status
            if feedback_ref:
                alert.feedback_ref = feedback_ref
            self._logs["alerts"].append(alert.to_dict())
            self._logs["alert_audit"].append(
                {
                    "alert_id": alert_id,
                    "from": previous.value,
                    "to": new_status.value,
                    "note": note,
                    "at": (at or datetime.now(timezone.utc)).strftime("%Y-%m-%dT%H:%M:%S"),
                }
            )
            return alert

    def audit_rows(self) -> list[dict]:
        return list(self._logs["alert_audit"].replay())

    # -- feedback (satisfies the retraining FeedbackSource protocol) ----------

    def append_feedback(self, record: FeedbackRecord) -> None:
        with self._lock:
            self._feedback[record.feedback_id] = record
            self._logs["feedback"].append(record.to_dict())

    def feedback_records(self) -> list[FeedbackRecord]:
        return list(self._feedback.values())

    def unconsumed_feedback(self) -> list[FeedbackRecord]:
        return [r for r in self._feedback.values() if not r.consumed_in_retrain]

    def mark_feedback_consumed(self, feedback_ids: Sequence[str]) -> None:
        with self._lock:
            for fid in feedback_ids:
                if fid in self._feedback:
                    self._feedback[fid].consumed_in_retrain = True
            self._logs["feedback"].append({"op": "consume", "ids": list(feedback_ids)})

    # -- profiles --------------------------------------------------------------

    def get_profile(self, user_id: str) -> RiskProfile:
        prof = self._profiles.get(user_id)
        if prof is None:
            prof = RiskProfile(user_id=user_id)
            self._profiles[user_id] = prof
        return prof

    def put_profile(self, profile: RiskProfile) -> None:
        with self._lock:
            self._profiles[profile.user_id] = profile
            self._logs["profiles"].append(profile.to_dict())

    def profiles(self) -> list[RiskProfile]:
        return list(self._profiles.values())

    # -- stats -------------------------------------------------------------------

    def ingest_rate(self, window_s: float = 60.0) -> float:
        now = time.monotonic()
        total = sum(n for t, n in self._ingest_marks if now - t <= window_s)
        return total / window_s

    def stats(self) -> StoreStats:
        by_status: dict[str, int] = {}
        by_severity: dict[str, int] = {}
        for alert in self._alerts.values():
            by_status[alert.status.value] = by_status.get(alert.status.value, 0) + 1
            by_severity[alert.severity] = by_severity.get(alert.severity, 0) + 1
        lat = sorted(self._latencies_ms)
        return StoreStats(
            event_count=len(self._event_ids),
            session_count=len(self._sessions),
            violation_count=len(self._violations),
            alerts_by_status=by_status,
            alerts_by_severity=by_severity,
            ingest_rate_eps=self.ingest_rate(),
            query_latency_ms={
                "p50": _percentile(lat, 0.50),
                "p95": _percentile(lat, 0.95),
                "p99": _percentile(lat, 0.99),
            },
            query_count=len(lat),
        )


def _session_to_dict(session: Session) -> dict:
    return {
        "session_id": session.session_id,
        "user_id": session.user_id,
        "device_id": session.device_id,
        "start": session.start.strftime("%Y-%m-%dT%H:%M:%S"),
        "end": session.end.strftime("%Y-%m-%dT%H:%M:%S"),
        "events": [e.to_dict() for e in session.events],
    }


def _session_from_dict(doc: dict) -> Session:
    return Session(
        session_id=doc["session_id"],
        user_id=doc["user_id"],
        device_id=doc["device_id"],
        start=datetime.strptime(doc["start"], "%Y-%m-%dT%H:%M:%S").replace(tzinfo=timezone.utc),
        end=datetime.strptime(doc["end"], "%Y-%m-%dT%H:%M:%S").replace(tzinfo=timezone.utc),
        events=[ActivityEvent.from_dict(e) for e in doc.get("events", [])],
    )
