"""Context assembly and deterministic recommendations for alert triage.

The default generator walks a first-match template table keyed on alert
origin, policy category, and environment flags. External generators plug in
as a local process (JSON context on stdin, JSON recommendation on stdout)
bounded by a wall-clock timeout; anything invalid falls back to templates.
Generation never mutates alerts or triggers actions.
"""

from __future__ import annotations

import json
import statistics
import subprocess
from dataclasses import dataclass, field
from datetime import timedelta
from enum import Enum
from typing import Protocol

from .errors import AlertNotFound, GeneratorTimeout
from .events import Directory
from .store import Alert, AlertOrigin, RiskStore

HISTORY_WINDOW = timedelta(days=30)

SUGGESTED_ACTIONS = {
    "AlertOnly", "RevokePrivilege", "RestrictFileAccess", "FlagUser",
    "DisconnectDevice", "Investigate", "Dismiss",
}


class Confidence(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"


@dataclass
class RecommendationContext:
    alert_id: str
    origin: str
    severity: str
    subject: str
    score: float
    trigger_policy: str = ""
    trigger_category: str = ""
    history: dict = field(default_factory=dict)
    org_norms: dict = field(default_factory=dict)
    environment: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "origin": self.origin,
            "severity": self.severity,
            "subject": self.subject,
            "score": self.score,
            "trigger_policy": self.trigger_policy,
            "trigger_category": self.trigger_category,
            "history": self.history,
            "org_norms": self.org_norms,
            "environment": self.environment,
        }


@dataclass
class Recommendation:
    summary: str
    reasoning: list[tuple[str, str]]  # (observation, inference)
    actions: list[str]
    confidence: Confidence

    def to_dict(self) -> dict:
        return {
            "summary": self.summary,
            "reasoning": [[o, i] for o, i in self.reasoning],
            "actions": self.actions,
            "confidence": self.confidence.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Recommendation":
        return cls(
            summary=d["summary"],
            reasoning=[(o, i) for o, i in d["reasoning"]],
            actions=list(d["actions"]),
            confidence=Confidence(d["confidence"]),
        )


def validate_recommendation(rec: Recommendation) -> bool:
    if not rec.reasoning:
        return False
    return all(a in SUGGESTED_ACTIONS for a in rec.actions) and bool(rec.actions)


def assemble_context(
    alert: Alert | str,
    store: RiskStore,
    directory: Directory | None = None,
) -> RecommendationContext:
    """Aggregate 30-day history, org norms, and environment flags for an alert.

    Only counts and flags cross this boundary; raw file content never does.
    Missing history yields explicit no-history markers.
    """
    if isinstance(alert, str):
        found = store.get_alert(alert)
        if found is None:
            raise AlertNotFound(alert)
        alert = found

    # the incident's own events are evidence, not history
    incident_ids: set[str] = set()
    if alert.origin is AlertOrigin.POLICY_VIOLATION:
        violation = next(
            (v for v in store.violations() if v["violation_id"] == alert.origin_ref), None
        )
        if violation:
            incident_ids = set(violation.get("event_ids", []))
    elif alert.origin is AlertOrigin.SCORE_THRESHOLD:
        session = store.get_session(alert.origin_ref)
        if session:
            incident_ids = {e.event_id for e in session.events}

    window_start = alert.created_at - HISTORY_WINDOW
    events = [
        e
        for e in store.query_events(alert.subject, window_start, alert.created_at)
        if e.event_id not in incident_ids
    ]
    counts: dict[str, int] = {}
    device_trust = "Unknown"
    ip_reputation = "none"
    for e in events:
        counts[e.activity.value] = counts.get(e.activity.value, 0) + 1
        device_trust = e.device_trust.value
        ip_reputation = e.raw_extra.get("ip_class", ip_reputation)

    prior_alerts = [
        a for a in store.alerts(user=alert.subject) if a.created_at < alert.created_at
    ]
    history = {
        "window_days": 30,
        "has_history": bool(events),
        "total_events": len(events),
        "activity_counts": counts,
        "prior_alert_count": len(prior_alerts),
    }

    department = ""
    dept_median = 0.0
    typical = None
    if directory is not None:
        user = directory.get(alert.subject)
        department = user.department if user else ""
        if department:
            peer_counts = []
            for peer in directory.users():
                if peer.department != department or peer.user_id == alert.subject:
                    continue
                peer_events = store.query_events(peer.user_id, window_start, alert.created_at)
                peer_counts.append(len(peer_events))
            if peer_counts:
                dept_median = statistics.median(peer_counts)
                typical = len(events) <= max(10.0, 1.5 * dept_median)
    org_norms = {
        "department": department,
        "department_median_events": dept_median,
        "typical_for_department": typical,
    }

    breakdown = alert.risk_score.breakdown if alert.risk_score else None
    alert_off_hours = not (9 <= alert.created_at.hour < 17)
    environment = {
        "device_trust": device_trust,
        "ip_reputation": ip_reputation,
        "off_hours": (breakdown.hours > 0) if breakdown else alert_off_hours,
        "device_flagged": (breakdown.device > 0) if breakdown else device_trust != "ManagedCompliant",
        "ip_flagged": (breakdown.ip > 0) if breakdown else ip_reputation in ("unknown", "blacklisted"),
    }

    trigger_policy = ""
    trigger_category = ""
    if alert.origin is AlertOrigin.POLICY_VIOLATION:
        violation = next(
            (v for v in store.violations() if v["violation_id"] == alert.origin_ref), None
        )
        if violation:
            trigger_policy = violation["policy_id"]
            trigger_category = violation.get("category", "")

    return RecommendationContext(
        alert_id=alert.alert_id,
        origin=alert.origin.value,
        severity=alert.severity,
        subject=alert.subject,
        score=alert.score_value,
        trigger_policy=trigger_policy,
        trigger_category=trigger_category,
        history=history,
        org_norms=org_norms,
        environment=environment,
    )


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


class Generator(Protocol):
    def generate(self, context: RecommendationContext) -> Recommendation: ...


# First-match rule table; "match" keys compare against context fields,
# None means wildcard. Editable via a JSON config without rebuilds.
DEFAULT_TEMPLATE_TABLE: list[dict] = [
    {
        "match": {"origin": "PolicyViolation", "trigger_category": "DataMovement", "off_hours": True, "has_history": False},
        "summary": "Large or unsanctioned data movement outside business hours by a subject with no comparable history.",
        "reasoning": [
            ["Data-movement policy fired outside business hours.", "Timing and volume are consistent with staging or exfiltration."],
            ["No similar activity in the subject's 30-day history.", "This is a sharp deviation, not an established workflow."],
        ],
        "actions": ["RestrictFileAccess", "Investigate"],
        "confidence": "High",
    },
    {
        "match": {"origin": "PolicyViolation", "trigger_category": "DataMovement"},
        "summary": "Data movement policy violation.",
        "reasoning": [
            ["A data-movement policy fired for this subject.", "Transfers should be validated against sanctioned workflows."],
        ],
        "actions": ["RestrictFileAccess", "Investigate"],
        "confidence": "Medium",
    },
    {
        "match": {"origin": "PolicyViolation", "trigger_category": "AttackPath"},
        "summary": "Attack-path exposure detected.",
        "reasoning": [
            ["Privilege spread or unpatched surface crossed the configured limit.", "Standing access should be reduced before it is exploited."],
        ],
        "actions": ["RevokePrivilege", "Investigate"],
        "confidence": "High",
    },
    {
        "match": {"origin": "PolicyViolation", "trigger_category": "UserRisk"},
        "summary": "Suspicious authentication or privilege activity.",
        "reasoning": [
            ["A user-risk policy fired on authentication behavior.", "Credential compromise or misuse is plausible."],
        ],
        "actions": ["FlagUser", "Investigate"],
        "confidence": "Medium",
    },
    {
        "match": {"origin": "PolicyViolation", "trigger_category": "ActivityRisk"},
        "summary": "Anomalous login or device activity.",
        "reasoning": [
            ["An activity-risk policy fired for this subject.", "Access-path anomalies warrant a closer look at the device and location."],
        ],
        "actions": ["FlagUser", "Investigate"],
        "confidence": "Medium",
    },
    {
        "match": {"origin": "PolicyViolation"},
        "summary": "Security policy violation recorded.",
        "reasoning": [
            ["A configured policy threshold was crossed.", "Review the triggering events against business context."],
        ],
        "actions": ["RestrictFileAccess", "Investigate"],
        "confidence": "Medium",
    },
    {
        "match": {"origin": "ScoreThreshold", "ip_flagged": True},
        "summary": "High session risk score including an untrusted network path.",
        "reasoning": [
            ["The session scored above the alerting threshold.", "Multiple factors contributed; see breakdown."],
            ["The source address is not on the trusted list.", "Network provenance raises the likelihood of account misuse."],
        ],
        "actions": ["FlagUser", "Investigate"],
        "confidence": "High",
    },
    {
        "match": {"origin": "ScoreThreshold", "has_history": True},
        "summary": "Session risk score above threshold for a subject with prior history.",
        "reasoning": [
            ["The session scored above the alerting threshold.", "Compare against the subject's established patterns before acting."],
        ],
        "actions": ["Investigate", "Dismiss"],
        "confidence": "Medium",
    },
    {
        "match": {"origin": "ScoreThreshold"},
        "summary": "Session risk score above threshold.",
        "reasoning": [
            ["The session scored above the alerting threshold.", "No history is available to contextualize the behavior."],
        ],
        "actions": ["Investigate"],
        "confidence": "Medium",
    },
    {
        "match": {"origin": "CumulativeRisk"},
        "summary": "Accumulated risk crossed the investigation threshold.",
        "reasoning": [
            ["The subject's decayed cumulative risk crossed its limit.", "A pattern of elevated sessions, not a single event, drove this alert."],
        ],
        "actions": ["FlagUser", "Investigate"],
        "confidence": "High",
    },
    {
        "match": {},
        "summary": "Alert requires review.",
        "reasoning": [["An alert was raised.", "Review the attached evidence."]],
        "actions": ["Investigate"],
        "confidence": "Low",
    },
]


class TemplateGenerator:
    """Deterministic first-match table generator; the table is a config document."""

    def __init__(self, table: list[dict] | None = None):
        self.table = table if table is not None else DEFAULT_TEMPLATE_TABLE

    @classmethod
    def from_json(cls, path) -> "TemplateGenerator":
        from pathlib import Path

        doc = json.loads(Path(path).read_text())
        return cls(doc["rules"] if isinstance(doc, dict) else doc)

    def _context_value(self, context: RecommendationContext, key: str):
        if key in ("origin", "severity", "trigger_category", "trigger_policy"):
            return getattr(context, key)
        if key in ("off_hours", "device_flagged", "ip_flagged"):
            return context.environment.get(key)
        if key in ("has_history", "prior_alert_count"):
            return context.history.get(key)
        return None

    def generate(self, context: RecommendationContext) -> Recommendation:
        for rule in self.table:
            if all(self._context_value(context, k) == v for k, v in rule["match"].items()):
                return Recommendation(
                    summary=rule["summary"],
                    reasoning=[(o, i) for o, i in rule["reasoning"]],
                    actions=list(rule["actions"]),
                    confidence=Confidence(rule["confidence"]),
                )
        return Recommendation(
            summary="Alert requires review.",
            reasoning=[("An alert was raised.", "Review the attached evidence.")],
            actions=["Investigate"],
            confidence=Confidence.LOW,
        )


class ExternalGenerator:
    """Local-process generator: context JSON in, recommendation JSON out, exit 0."""

    def __init__(self, command: list[str], timeout_s: float = 10.0):
        self.command = command
        self.timeout_s = timeout_s

    def generate(self, context: RecommendationContext) -> Recommendation:
        try:
            proc = subprocess.run(
                self.command,
                input=json.dumps(context.to_dict()).encode(),
                capture_output=True,
                timeout=self.timeout_s,
            )
        except subprocess.TimeoutExpired as exc:
            raise GeneratorTimeout(f"generator exceeded {self.timeout_s}s") from exc
        if proc.returncode != 0:
            raise ValueError(f"generator exited {proc.returncode}")
        return Recommendation.from_dict(json.loads(proc.stdout.decode()))


def generate(
    context: RecommendationContext,
    generator: Generator | None = None,
    template: TemplateGenerator | None = None,
) -> Recommendation:
    """Produce a recommendation; invalid or timed-out external output falls back."""
    template = template or TemplateGenerator()
    if generator is None:
        return template.generate(context)
    try:
        rec = generator.generate(context)
    except (GeneratorTimeout, ValueError, KeyError, json.JSONDecodeError):
        return template.generate(context)
    if not validate_recommendation(rec):
        return template.generate(context)
    return rec
