from __future__ import annotations

import json
import sys
from datetime import datetime, timedelta, timezone

import pytest

from irm.errors import AlertNotFound
from irm.events import Activity, Directory, UserRecord
from irm.recommend import (
    Confidence,
    ExternalGenerator,
    Recommendation,
    RecommendationContext,
    TemplateGenerator,
    assemble_context,
    generate,
    validate_recommendation,
)
from irm.store import Alert, AlertOrigin, AlertStatus, RiskStore

from conftest import make_event

T0 = datetime(2012, 4, 2, 22, 30, 0, tzinfo=timezone.utc)  # off-hours


def seeded_store(tmp_path, n_history=40) -> tuple[RiskStore, Alert]:
    store = RiskStore(tmp_path)
    history = [
        make_event(
            event_id=f"{{H{i}}}",
            ts=T0 - timedelta(days=3, minutes=i),
            user_id="mallory",
            activity=Activity.FILE_READ if i % 2 else Activity.FILE_WRITE,
            content="SECRET-PAYLOAD-DO-NOT-LEAK",
        )
        for i in range(n_history)
    ]
    store.append_events(history)
    alert = store.upsert_alert(
        Alert.build(
            created_at=T0,
            subject="mallory",
            origin=AlertOrigin.SCORE_THRESHOLD,
            origin_ref="S-x",
            severity="Medium",
        )
    )
    return store, alert


def violation_alert(store: RiskStore, category="DataMovement", policy="mass-data-download") -> Alert:
    store.put_violation(
        {
            "violation_id": "V-abc",
            "policy_id": policy,
            "subject": "mallory",
            "event_ids": [f"{{H{i}}}" for i in range(5)],
            "observed": 100.0,
            "threshold": 100.0,
            "fired_at": T0.strftime("%Y-%m-%dT%H:%M:%S"),
            "category": category,
            "severity": "High",
        }
    )
    return store.upsert_alert(
        Alert.build(
            created_at=T0,
            subject="mallory",
            origin=AlertOrigin.POLICY_VIOLATION,
            origin_ref="V-abc",
            severity="High",
        )
    )


class TestAssembleContext:
    def test_history_counts_match_linear_scan(self, tmp_path):
        store, alert = seeded_store(tmp_path)
        ctx = assemble_context(alert, store)
        # independent scan over everything in the store
        window_start = alert.created_at - timedelta(days=30)
        expected: dict[str, int] = {}
        for e in store.iter_events():
            if e.user_id == "mallory" and window_start <= e.timestamp <= alert.created_at:
                expected[e.activity.value] = expected.get(e.activity.value, 0) + 1
        assert ctx.history["activity_counts"] == expected
        assert ctx.history["total_events"] == sum(expected.values())
        assert ctx.history["has_history"] is True

    def test_brand_new_user_no_history_markers(self, tmp_path):
        store = RiskStore(tmp_path)
        alert = store.upsert_alert(
            Alert.build(created_at=T0, subject="ghost", origin=AlertOrigin.SCORE_THRESHOLD,
                        origin_ref="S-y", severity="Medium")
        )
        ctx = assemble_context(alert, store)
        assert ctx.history["has_history"] is False
        assert ctx.history["total_events"] == 0
        assert ctx.history["activity_counts"] == {}
        assert ctx.org_norms["typical_for_department"] is None

    def test_unknown_alert(self, tmp_path):
        store = RiskStore(tmp_path)
        with pytest.raises(AlertNotFound):
            assemble_context("A-missing", store)

    def test_violation_events_excluded_from_history(self, tmp_path):
        store, _ = seeded_store(tmp_path, n_history=5)
        alert = violation_alert(store)
        ctx = assemble_context(alert, store)
        # all five events belong to the violation itself
        assert ctx.history["has_history"] is False

    def test_no_raw_content_in_context(self, tmp_path):
        store, alert = seeded_store(tmp_path)
        ctx = assemble_context(alert, store)
        blob = json.dumps(ctx.to_dict())
        assert "SECRET-PAYLOAD-DO-NOT-LEAK" not in blob

    def test_department_median(self, tmp_path):
        store, alert = seeded_store(tmp_path)
        directory = Directory(
            [
                UserRecord("mallory", department="eng"),
                UserRecord("peer1", department="eng"),
                UserRecord("peer2", department="eng"),
            ]
        )
        store.append_events(
            [
                make_event(event_id=f"{{P{i}}}", ts=T0 - timedelta(days=2), user_id="peer1",
                           activity=Activity.FILE_READ)
                for i in range(4)
            ]
        )
        ctx = assemble_context(alert, store, directory)
        assert ctx.org_norms["department"] == "eng"
        assert ctx.org_norms["department_median_events"] == 2.0  # median(4, 0)


class TestTemplateGenerator:
    def test_mass_download_off_hours_no_history(self, tmp_path):
        store = RiskStore(tmp_path)
        alert = violation_alert(store)
        ctx = assemble_context(alert, store)
        assert ctx.environment["off_hours"] is True
        assert ctx.history["has_history"] is False
        rec = generate(ctx)
        assert rec.actions == ["RestrictFileAccess", "Investigate"]
        assert rec.confidence is Confidence.HIGH
        assert len(rec.reasoning) >= 1

    def test_identical_context_identical_output(self, tmp_path):
        store, alert = seeded_store(tmp_path)
        ctx = assemble_context(alert, store)
        a = generate(ctx)
        b = generate(ctx)
        assert a == b

    def test_every_rule_emits_valid_recommendation(self):
        gen = TemplateGenerator()
        for origin in ("PolicyViolation", "ScoreThreshold", "CumulativeRisk"):
            for category in ("", "DataMovement", "UserRisk", "AttackPath", "ActivityRisk", "DataRisk"):
                ctx = RecommendationContext(
                    alert_id="A-x", origin=origin, severity="High", subject="u",
                    score=0.5, trigger_category=category,
                    history={"has_history": False},
                    environment={"off_hours": True, "ip_flagged": False, "device_flagged": False},
                )
                assert validate_recommendation(gen.generate(ctx))

    def test_generate_has_no_side_effects(self, tmp_path):
        store, alert = seeded_store(tmp_path)
        before_status = alert.status
        before_alerts = len(store.alerts())
        before_violations = len(store.violations())
        generate(assemble_context(alert, store))
        assert alert.status is before_status
        assert len(store.alerts()) == before_alerts
        assert len(store.violations()) == before_violations


class _BadGenerator:
    def generate(self, context):
        return Recommendation(summary="bad", reasoning=[], actions=["Investigate"], confidence=Confidence.LOW)


class _WeirdActionGenerator:
    def generate(self, context):
        return Recommendation(
            summary="odd", reasoning=[("a", "b")], actions=["LaunchMissiles"], confidence=Confidence.HIGH
        )


class TestExternalGenerator:
    def _ctx(self):
        return RecommendationContext(
            alert_id="A-1", origin="ScoreThreshold", severity="Medium", subject="u", score=0.4,
            history={"has_history": False}, environment={},
        )

    def test_zero_reasoning_steps_rejected_falls_back(self):
        rec = generate(self._ctx(), generator=_BadGenerator())
        assert rec.reasoning  # template output
        assert validate_recommendation(rec)

    def test_unknown_action_rejected_falls_back(self):
        rec = generate(self._ctx(), generator=_WeirdActionGenerator())
        assert all(a in ("Investigate", "Dismiss") or a in rec.actions for a in rec.actions)
        assert "LaunchMissiles" not in rec.actions

    def test_subprocess_generator_round_trip(self):
        code = (
            "import json,sys;"
            "ctx=json.load(sys.stdin);"
            "print(json.dumps({'summary': 'echo ' + ctx['alert_id'],"
            "'reasoning': [['saw it', 'checked it']],"
            "'actions': ['Investigate'], 'confidence': 'Medium'}))"
        )
        gen = ExternalGenerator([sys.executable, "-c", code], timeout_s=10)
        rec = generate(self._ctx(), generator=gen)
        assert rec.summary == "echo A-1"
        assert rec.confidence is Confidence.MEDIUM

    def test_timeout_falls_back_to_template(self):
        gen = ExternalGenerator([sys.executable, "-c", "import time; time.sleep(5)"], timeout_s=0.3)
        rec = generate(self._ctx(), generator=gen)
        assert validate_recommendation(rec)
        assert rec.reasoning

    def test_nonzero_exit_falls_back(self):
        gen = ExternalGenerator([sys.executable, "-c", "import sys; sys.exit(3)"], timeout_s=5)
        rec = generate(self._ctx(), generator=gen)
        assert validate_recommendation(rec)


class TestTemplateConfigDocument:
    def test_table_loads_from_json(self, tmp_path):
        doc = {
            "rules": [
                {
                    "match": {"origin": "ScoreThreshold"},
                    "summary": "custom phrasing",
                    "reasoning": [["obs", "inf"]],
                    "actions": ["Dismiss"],
                    "confidence": "Low",
                }
            ]
        }
        path = tmp_path / "templates.json"
        path.write_text(json.dumps(doc))
        gen = TemplateGenerator.from_json(path)
        ctx = RecommendationContext(
            alert_id="A-1", origin="ScoreThreshold", severity="Low", subject="u", score=0.1
        )
        rec = gen.generate(ctx)
        assert rec.summary == "custom phrasing"
        assert rec.actions == ["Dismiss"]
