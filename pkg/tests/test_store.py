from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from irm.airs import FeatureVector, make_feedback_record
from irm.errors import AlertNotFound, IllegalTransition, InvalidRange, MissingFeedback
from irm.events import Activity, Source
from irm.store import Alert, AlertOrigin, AlertStatus, RiskStore

from conftest import make_event

T0 = datetime(2011, 3, 1, 9, 0, 0, tzinfo=timezone.utc)


def batch(n: int, user="U1", prefix="E", start=T0, step_s=60):
    return [
        make_event(
            event_id=f"{{{prefix}{i}}}",
            ts=start + timedelta(seconds=i * step_s),
            user_id=user,
            activity=Activity.FILE_WRITE,
        )
        for i in range(n)
    ]


def alert(alert_id_suffix="1", subject="U1", at=T0) -> Alert:
    return Alert.build(
        created_at=at,
        subject=subject,
        origin=AlertOrigin.SCORE_THRESHOLD,
        origin_ref=f"S-{alert_id_suffix}",
        severity="Medium",
    )


class TestAppendEvents:
    def test_fresh_batch_accepted(self, tmp_path):
        store = RiskStore(tmp_path)
        result = store.append_events(batch(1000))
        assert result == {"accepted": 1000, "duplicates": 0}
        assert store.event_count == 1000

    def test_replayed_batch_all_duplicates(self, tmp_path):
        store = RiskStore(tmp_path)
        events = batch(1000)
        store.append_events(events)
        result = store.append_events(events)
        assert result == {"accepted": 0, "duplicates": 1000}
        assert store.event_count == 1000

    def test_empty_batch(self, tmp_path):
        store = RiskStore(tmp_path)
        assert store.append_events([]) == {"accepted": 0, "duplicates": 0}
        assert not list((tmp_path / "events").glob("seg-*.jsonl"))

    def test_segment_roll(self, tmp_path):
        store = RiskStore(tmp_path, segment_max_rows=100)
        store.append_events(batch(250))
        segments = sorted((tmp_path / "events").glob("seg-*.jsonl"))
        assert len(segments) == 3
        # sealed segments carry checksums
        assert (tmp_path / "events" / "seg-000001.sha256").exists()


class TestQueryEvents:
    def test_sorted_and_filtered(self, tmp_path):
        store = RiskStore(tmp_path)
        store.append_events(batch(50))
        out = store.query_events("U1", T0, T0 + timedelta(hours=2))
        assert len(out) == 50
        assert [e.timestamp for e in out] == sorted(e.timestamp for e in out)

    def test_invalid_range(self, tmp_path):
        store = RiskStore(tmp_path)
        with pytest.raises(InvalidRange):
            store.query_events("U1", T0, T0 - timedelta(seconds=1))

    def test_matches_full_scan_oracle(self, tmp_path):
        store = RiskStore(tmp_path)
        import random

        rng = random.Random(17)
        events = []
        for i in range(10_000):
            events.append(
                make_event(
                    event_id=f"{{Q{i}}}",
                    ts=T0 + timedelta(seconds=rng.randint(0, 40_000)),
                    user_id=f"U{rng.randint(0, 20)}",
                    activity=rng.choice([Activity.FILE_WRITE, Activity.FILE_READ, Activity.FILE_DELETE]),
                )
            )
        store.append_events(events)

        lo = T0 + timedelta(seconds=5_000)
        hi = T0 + timedelta(seconds=30_000)
        for user in ("U3", "U7", "U19"):
            got = store.query_events(user, lo, hi)
            oracle = [
                e for e in events if e.user_id == user and lo <= e.timestamp <= hi
            ]
            oracle.sort(key=lambda e: e.timestamp)
            assert [e.event_id for e in got] == [e.event_id for e in oracle]

        got = store.query_events("U3", lo, hi, activities=[Activity.FILE_DELETE])
        oracle = [
            e for e in events
            if e.user_id == "U3" and lo <= e.timestamp <= hi and e.activity is Activity.FILE_DELETE
        ]
        oracle.sort(key=lambda e: e.timestamp)
        assert [e.event_id for e in got] == [e.event_id for e in oracle]

    def test_limit(self, tmp_path):
        store = RiskStore(tmp_path)
        store.append_events(batch(50))
        out = store.query_events("U1", T0, T0 + timedelta(hours=2), limit=7)
        assert len(out) == 7

    def test_latency_histogram_populated(self, tmp_path):
        store = RiskStore(tmp_path)
        store.append_events(batch(10))
        for _ in range(5):
            store.query_events("U1", T0, T0 + timedelta(hours=1))
        stats = store.stats()
        assert stats.query_count == 5
        assert stats.query_latency_ms["p95"] >= stats.query_latency_ms["p50"] >= 0.0


class TestDurability:
    def test_reopen_after_acknowledged_append(self, tmp_path):
        store = RiskStore(tmp_path)
        store.append_events(batch(123))
        # crash: no close(), new instance over the same directory
        reopened = RiskStore(tmp_path)
        assert reopened.event_count == 123
        out = reopened.query_events("U1", T0, T0 + timedelta(hours=3))
        assert len(out) == 123

    def test_torn_trailing_line_discarded(self, tmp_path):
        store = RiskStore(tmp_path)
        store.append_events(batch(10))
        store.close()
        seg = sorted((tmp_path / "events").glob("seg-*.jsonl"))[0]
        with open(seg, "ab") as fh:
            fh.write(b'{"event_id": "{TORN}", "timestamp": "2011-03-01T')  # no newline
        reopened = RiskStore(tmp_path)
        assert reopened.event_count == 10
        assert not reopened.has_event("{TORN}")

    def test_new_appends_after_torn_recovery(self, tmp_path):
        store = RiskStore(tmp_path)
        store.append_events(batch(10))
        store.close()
        seg = sorted((tmp_path / "events").glob("seg-*.jsonl"))[0]
        with open(seg, "ab") as fh:
            fh.write(b'{"partial')
        reopened = RiskStore(tmp_path)
        reopened.append_events(batch(5, prefix="N", start=T0 + timedelta(days=1)))
        assert reopened.event_count == 15

    def test_verify_clean_store(self, tmp_path):
        store = RiskStore(tmp_path, segment_max_rows=50)
        store.append_events(batch(120))
        report = store.verify()
        assert report["segments_checked"] == 3
        assert report["corrupt"] == []

    def test_verify_detects_tamper(self, tmp_path):
        store = RiskStore(tmp_path, segment_max_rows=50)
        store.append_events(batch(120))
        store.close()
        sealed = tmp_path / "events" / "seg-000001.jsonl"
        data = sealed.read_bytes()
        sealed.write_bytes(data.replace(b"U1", b"UX", 1))
        report = RiskStore(tmp_path, segment_max_rows=50).verify()
        assert str(sealed) in report["corrupt"]


class TestAlertStateMachine:
    def test_legal_transition_writes_audit(self, tmp_path):
        store = RiskStore(tmp_path)
        a = store.upsert_alert(alert())
        out = store.transition_alert(a.alert_id, AlertStatus.ACKNOWLEDGED, note="looking")
        assert out.status is AlertStatus.ACKNOWLEDGED
        rows = store.audit_rows()
        assert len(rows) == 1
        assert rows[0]["from"] == "Open" and rows[0]["to"] == "Acknowledged"

    def test_illegal_transition(self, tmp_path):
        store = RiskStore(tmp_path)
        a = store.upsert_alert(alert())
        store.transition_alert(a.alert_id, AlertStatus.RESOLVED)
        with pytest.raises(IllegalTransition):
            store.transition_alert(a.alert_id, AlertStatus.OPEN)
        with pytest.raises(IllegalTransition):
            store.transition_alert(a.alert_id, AlertStatus.ACKNOWLEDGED)

    def test_rejected_requires_feedback(self, tmp_path):
        store = RiskStore(tmp_path)
        a = store.upsert_alert(alert())
        with pytest.raises(MissingFeedback):
            store.transition_alert(a.alert_id, AlertStatus.REJECTED)
        store.transition_alert(a.alert_id, AlertStatus.REJECTED, feedback_ref="F-000001")
        assert store.get_alert(a.alert_id).status is AlertStatus.REJECTED

    def test_unknown_alert(self, tmp_path):
        store = RiskStore(tmp_path)
        with pytest.raises(AlertNotFound):
            store.transition_alert("A-missing", AlertStatus.RESOLVED)

    def test_audit_rows_survive_reopen_append_only(self, tmp_path):
        store = RiskStore(tmp_path)
        a = store.upsert_alert(alert())
        store.transition_alert(a.alert_id, AlertStatus.ACKNOWLEDGED)
        store.transition_alert(a.alert_id, AlertStatus.RESOLVED)
        store.close()
        reopened = RiskStore(tmp_path)
        rows = reopened.audit_rows()
        assert [(r["from"], r["to"]) for r in rows] == [
            ("Open", "Acknowledged"), ("Acknowledged", "Resolved"),
        ]
        assert reopened.get_alert(a.alert_id).status is AlertStatus.RESOLVED


class TestFeedbackPersistence:
    def test_round_trip_and_consumption(self, tmp_path):
        store = RiskStore(tmp_path)
        fv = FeatureVector(np.linspace(0, 1, 10))
        rec = make_feedback_record("F-1", "A-1", fv, 0.6, 0.9, 0.5)
        store.append_feedback(rec)
        assert len(store.unconsumed_feedback()) == 1
        store.mark_feedback_consumed(["F-1"])
        assert store.unconsumed_feedback() == []
        store.close()

        reopened = RiskStore(tmp_path)
        records = reopened.feedback_records()
        assert len(records) == 1
        assert records[0].consumed_in_retrain is True
        assert records[0].s_final == rec.s_final


class TestStats:
    def test_alert_counts_by_status_and_severity(self, tmp_path):
        store = RiskStore(tmp_path)
        a1 = store.upsert_alert(alert("1"))
        a2 = store.upsert_alert(alert("2"))
        hi = alert("3")
        hi.severity = "High"
        store.upsert_alert(hi)
        store.transition_alert(a1.alert_id, AlertStatus.RESOLVED)
        stats = store.stats()
        assert stats.alerts_by_status == {"Open": 2, "Resolved": 1}
        assert stats.alerts_by_severity == {"Medium": 2, "High": 1}
        assert stats.event_count == 0


class TestEncryptionCodec:
    def test_fernet_round_trip_and_opacity(self, tmp_path):
        from cryptography.fernet import Fernet

        from irm.store import FernetCodec

        key = Fernet.generate_key()
        store = RiskStore(tmp_path, codec=FernetCodec(key))
        store.append_events(batch(25))
        store.put_session(
            __import__("irm.events", fromlist=["Session"]).Session(
                session_id="S-enc", user_id="U1", device_id="PC-1", start=T0, end=T0, events=[]
            )
        )
        out = store.query_events("U1", T0, T0 + timedelta(hours=1))
        assert len(out) == 25
        store.close()

        # ciphertext on disk: no plaintext JSON structure
        seg = sorted((tmp_path / "events").glob("seg-*.jsonl"))[0]
        raw = seg.read_bytes()
        assert b'"user_id"' not in raw and b'"U1"' not in raw and b"{" not in raw

        reopened = RiskStore(tmp_path, codec=FernetCodec(key))
        assert reopened.event_count == 25
        assert reopened.get_session("S-enc") is not None
        assert reopened.verify()["corrupt"] == []
        reopened.close()

    def test_wrong_key_reads_nothing(self, tmp_path):
        from cryptography.fernet import Fernet

        from irm.store import FernetCodec

        store = RiskStore(tmp_path, codec=FernetCodec(Fernet.generate_key()))
        store.append_events(batch(5))
        store.close()
        other = RiskStore(tmp_path, codec=FernetCodec(Fernet.generate_key()))
        assert other.event_count == 0
        other.close()
