"""Windowed security-policy evaluation over the enriched event stream.

Each policy pairs a trigger (count/bytes/geo windows, device trust, sensitive
access, baseline deviation, privilege spread...) with a simulated automated
action. A policy fires at most once per (policy, subject) until its window
slides past the first triggering event. Actions are recorded in a shadow
registry only; no external system is touched.
"""

from __future__ import annotations

import hashlib
import json
import statistics
from collections import deque
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from .errors import DuplicateAction, PolicyConfigError
from .events import (
    Activity,
    ActivityEvent,
    DeviceRegistry,
    DeviceTrust,
    Privilege,
    UserRecord,
    region_distance_km,
)


class PolicyCategory(str, Enum):
    USER_RISK = "UserRisk"
    DATA_MOVEMENT = "DataMovement"
    ATTACK_PATH = "AttackPath"
    ACTIVITY_RISK = "ActivityRisk"
    DATA_RISK = "DataRisk"
    DATA_COLLABORATION = "DataCollaboration"
    BEHAVIOR_ANOMALY = "BehaviorAnomaly"


class Severity(str, Enum):
    LOW_SEV = "LowSev"
    MEDIUM = "Medium"
    HIGH = "High"
    CRITICAL = "Critical"


class Action(str, Enum):
    ALERT_ONLY = "AlertOnly"
    REVOKE_PRIVILEGE = "RevokePrivilege"
    RESTRICT_FILE_ACCESS = "RestrictFileAccess"
    FLAG_USER = "FlagUser"
    DISCONNECT_DEVICE = "DisconnectDevice"


class TriggerKind(str, Enum):
    COUNT_IN_WINDOW = "CountInWindow"
    GEO_DISTANCE_IN_WINDOW = "GeoDistanceInWindow"
    PRIVILEGE_ESCALATION = "PrivilegeEscalation"
    UNTRUSTED_DEVICE = "UntrustedDevice"
    BYTES_IN_WINDOW = "BytesInWindow"
    EXTERNAL_SHARE = "ExternalShare"
    SENSITIVE_ACCESS = "SensitiveAccess"
    MASS_DELETION = "MassDeletion"
    STORAGE_LOCATION = "StorageLocation"
    PUBLIC_LINK = "PublicLink"
    BASELINE_DEVIATION = "BaselineDeviation"
    EXCESSIVE_PRIVILEGE_SPREAD = "ExcessivePrivilegeSpread"
    OUTDATED_SOFTWARE = "OutdatedSoftware"
    HIGH_RISK_ACCESS_SPREAD = "HighRiskAccessSpread"


@dataclass
class TriggerSpec:
    kind: TriggerKind
    params: dict = field(default_factory=dict)

    def window(self) -> timedelta:
        return timedelta(seconds=self.params.get("window_s", 86400))


@dataclass
class Policy:
    policy_id: str
    name: str
    category: PolicyCategory
    trigger: TriggerSpec
    severity: Severity
    action: Action
    enabled: bool = True


@dataclass
class PolicyViolation:
    violation_id: str
    policy_id: str
    subject: str
    event_ids: list[str]
    observed: float
    threshold: float
    fired_at: datetime
    device_id: str = ""
    action_taken: Optional["ActionRecord"] = None

    def to_dict(self) -> dict:
        return {
            "violation_id": self.violation_id,
            "policy_id": self.policy_id,
            "subject": self.subject,
            "event_ids": self.event_ids,
            "observed": self.observed,
            "threshold": self.threshold,
            "fired_at": self.fired_at.strftime("%Y-%m-%dT%H:%M:%S"),
            "device_id": self.device_id,
            "action_taken": self.action_taken.to_dict() if self.action_taken else None,
        }


@dataclass
class ActionRecord:
    action: Action
    target: str
    executed_at: datetime
    simulated: bool = True
    operator_note: str = ""

    def to_dict(self) -> dict:
        return {
            "action": self.action.value,
            "target": self.target,
            "executed_at": self.executed_at.strftime("%Y-%m-%dT%H:%M:%S"),
            "simulated": self.simulated,
            "operator_note": self.operator_note,
        }


# ---------------------------------------------------------------------------
# Auxiliary org config
# ---------------------------------------------------------------------------


@dataclass
class AuxConfig:
    org_domains: list[str] = field(default_factory=lambda: ["corp.example.com"])
    partner_domains: list[str] = field(default_factory=list)
    approved_sync_targets: list[str] = field(default_factory=lambda: ["corp-backup"])
    approved_regions: list[str] = field(default_factory=lambda: ["US-CA", "US-NY", "US-TX", "US-WA"])
    acl: dict[str, list[str]] = field(default_factory=dict)  # category -> allowed user ids
    approved_paths: list[str] = field(default_factory=lambda: ["/secure/", "/vault/"])
    roles: dict[str, list[dict]] = field(default_factory=dict)  # user -> [{system, role, privileged}]
    min_versions: dict[str, str] = field(default_factory=dict)  # os name -> minimum version
    high_risk_resources: list[str] = field(default_factory=list)

    @classmethod
    def from_json(cls, path: str | Path) -> "AuxConfig":
        doc = json.loads(Path(path).read_text())
        cfg = cls()
        for f in (
            "org_domains", "partner_domains", "approved_sync_targets", "approved_regions",
            "acl", "approved_paths", "roles", "min_versions", "high_risk_resources",
        ):
            if f in doc:
                setattr(cfg, f, doc[f])
        return cfg

    def acl_allows(self, user_id: str) -> bool:
        if not self.acl:
            return False
        return any(user_id in users for users in self.acl.values())


def _version_tuple(text: str) -> tuple[int, ...]:
    parts = []
    for chunk in text.split("."):
        digits = "".join(ch for ch in chunk if ch.isdigit())
        parts.append(int(digits) if digits else 0)
    return tuple(parts)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

BASELINE_WINDOW_DAYS = 30
BASELINE_WARM_BUCKETS = 14


class BaselineTracker:
    """Per-user, per-activity rolling daily counts over a 30-day window."""

    def __init__(self, window_days: int = BASELINE_WINDOW_DAYS, warm_buckets: int = BASELINE_WARM_BUCKETS):
        self.window_days = window_days
        self.warm_buckets = warm_buckets
        self._daily: dict[tuple[str, str], dict[date, int]] = {}

    def observe(self, event: ActivityEvent) -> None:
        key = (event.user_id, event.activity.value)
        buckets = self._daily.setdefault(key, {})
        day = event.timestamp.date()
        buckets[day] = buckets.get(day, 0) + 1
        cutoff = day - timedelta(days=self.window_days + 1)
        for stale in [d for d in buckets if d < cutoff]:
            del buckets[stale]

    def today_count(self, user_id: str, activity: str, day: date) -> int:
        return self._daily.get((user_id, activity), {}).get(day, 0)

    def stats(self, user_id: str, activity: str, day: date) -> tuple[float, float, int]:
        """(mean, std, bucket count) over prior days in the window, excluding today."""
        buckets = self._daily.get((user_id, activity), {})
        lo = day - timedelta(days=self.window_days)
        counts = [c for d, c in buckets.items() if lo <= d < day]
        if not counts:
            return 0.0, 0.0, 0
        mean = statistics.fmean(counts)
        std = statistics.pstdev(counts)
        return mean, std, len(counts)

    def is_warm(self, user_id: str, activity: str, day: date) -> bool:
        return self.stats(user_id, activity, day)[2] >= self.warm_buckets


def evaluate_baseline(
    event: ActivityEvent,
    tracker: BaselineTracker,
    z_limit: float = 3.0,
    floor: int = 10,
) -> Optional[tuple[float, float]]:
    """(observed, limit) when today's count breaks mean + z*std and the floor; None otherwise.

    Cold baselines (< 14 daily buckets of history) never fire.
    """
    day = event.timestamp.date()
    activity = event.activity.value
    if not tracker.is_warm(event.user_id, activity, day):
        return None
    today = tracker.today_count(event.user_id, activity, day)
    mean, std, _ = tracker.stats(event.user_id, activity, day)
    limit = mean + z_limit * std
    if today > limit and today >= floor:
        return float(today), float(limit)
    return None


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


@dataclass
class PolicyContext:
    """Per-event external context: resolved user plus file sensitivity lookups."""

    user: Optional[UserRecord] = None
    sensitive_files: set[str] = field(default_factory=set)
    file_paths: dict[str, str] = field(default_factory=dict)


def _violation_id(policy_id: str, subject: str, first_ts: datetime, fired_at: datetime) -> str:
    key = f"{policy_id}|{subject}|{first_ts.isoformat()}|{fired_at.isoformat()}"
    return "V-" + hashlib.sha1(key.encode()).hexdigest()[:12]


_FILE_ACTIVITIES = {
    a.value
    for a in (
        Activity.FILE_UPLOAD, Activity.FILE_CREATE, Activity.FILE_READ, Activity.FILE_WRITE,
        Activity.FILE_RENAME, Activity.FILE_MOVE, Activity.FILE_DELETE,
        Activity.FILE_SHARE_EXTERNAL, Activity.FILE_SHARE_INTERNAL,
        Activity.ATTACHMENT_SHARE, Activity.ATTACHMENT_EDIT,
    )
}


class PolicyEngine:
    """Evaluates enabled policies per event with shard-local window state."""

    def __init__(
        self,
        policies: Sequence[Policy],
        aux: AuxConfig | None = None,
        device_registry: DeviceRegistry | None = None,
    ):
        self.policies = [p for p in policies if p.enabled]
        self.aux = aux or AuxConfig()
        self.device_registry = device_registry
        self.baselines = BaselineTracker()
        # (policy_id, subject) -> deque[(ts, event_id, extra)]
        self._windows: dict[tuple[str, str], deque] = {}
        # (policy_id, subject) -> first triggering event ts of the last fire
        self._suppressed: dict[tuple[str, str], datetime] = {}
        self._seen_devices: dict[str, set[str]] = {}
        self.shadow_registry: dict[str, str] = {}
        self._actioned: set[str] = set()

    # -- helpers -------------------------------------------------------------

    def _deque_for(self, policy: Policy, subject: str) -> deque:
        return self._windows.setdefault((policy.policy_id, subject), deque())

    def _suppression_ok(self, policy: Policy, subject: str, now: datetime) -> bool:
        first = self._suppressed.get((policy.policy_id, subject))
        if first is None:
            return True
        return now - policy.trigger.window() > first

    def _fire(
        self,
        policy: Policy,
        subject: str,
        event: ActivityEvent,
        event_ids: list[str],
        observed: float,
        threshold: float,
        first_ts: datetime,
    ) -> PolicyViolation:
        self._suppressed[(policy.policy_id, subject)] = first_ts
        return PolicyViolation(
            violation_id=_violation_id(policy.policy_id, subject, first_ts, event.timestamp),
            policy_id=policy.policy_id,
            subject=subject,
            event_ids=event_ids,
            observed=observed,
            threshold=threshold,
            fired_at=event.timestamp,
            device_id=event.device_id,
        )

    @staticmethod
    def _matches_app(event: ActivityEvent, params: dict) -> bool:
        app = params.get("app")
        return app is None or event.app_context.value == app

    @staticmethod
    def _matches_activities(event: ActivityEvent, params: dict) -> bool:
        acts = params.get("activities")
        return not acts or event.activity.value in acts

    @staticmethod
    def _domain_of(value: str) -> str:
        return value.rsplit("@", 1)[-1].lower() if value else ""

    def _is_sensitive(self, event: ActivityEvent, ctx: PolicyContext) -> bool:
        return bool(event.file_id) and event.file_id in ctx.sensitive_files

    # -- per-kind evaluation ---------------------------------------------------

    def _eval_count(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        params = policy.trigger.params
        if not self._matches_activities(event, params) or not self._matches_app(event, params):
            return None
        allow = params.get("region_allowlist")
        if allow is not None:
            if not event.geo_region or event.geo_region in allow:
                return None
        if params.get("sensitive_only") and not self._is_sensitive(event, ctx):
            return None

        dq = self._deque_for(policy, event.user_id)
        dq.append((event.timestamp, event.event_id, event.device_id))
        cutoff = event.timestamp - policy.trigger.window()
        while dq and dq[0][0] < cutoff:
            dq.popleft()

        threshold = params["threshold"]
        if len(dq) < threshold:
            return None
        min_devices = params.get("distinct_devices_min")
        if min_devices and len({d for _, _, d in dq}) < min_devices:
            return None
        if not self._suppression_ok(policy, event.user_id, event.timestamp):
            return None
        return self._fire(
            policy, event.user_id, event,
            [eid for _, eid, _ in dq], float(len(dq)), float(threshold), dq[0][0],
        )

    def _eval_bytes(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        params = policy.trigger.params
        if not self._matches_activities(event, params) or not self._matches_app(event, params):
            return None
        size = 0
        try:
            size = int(event.raw_extra.get("bytes", "0"))
        except ValueError:
            size = 0
        dq = self._deque_for(policy, event.user_id)
        dq.append((event.timestamp, event.event_id, size))
        cutoff = event.timestamp - policy.trigger.window()
        while dq and dq[0][0] < cutoff:
            dq.popleft()

        count = len(dq)
        total = sum(s for _, _, s in dq)
        count_thr = params.get("count_threshold")
        bytes_thr = params.get("bytes_threshold")
        crossed_count = count_thr is not None and count >= count_thr
        crossed_bytes = bytes_thr is not None and total >= bytes_thr
        if not (crossed_count or crossed_bytes):
            return None
        if not self._suppression_ok(policy, event.user_id, event.timestamp):
            return None
        observed, threshold = (
            (float(count), float(count_thr)) if crossed_count else (float(total), float(bytes_thr))
        )
        return self._fire(
            policy, event.user_id, event, [eid for _, eid, _ in dq], observed, threshold, dq[0][0]
        )

    def _eval_geo(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        params = policy.trigger.params
        if event.activity is not Activity.LOGIN or not event.geo_region:
            return None
        dq = self._deque_for(policy, event.user_id)
        cutoff = event.timestamp - policy.trigger.window()
        while dq and dq[0][0] < cutoff:
            dq.popleft()

        km_limit = params["km_threshold"]
        best: Optional[tuple[float, datetime, str]] = None
        for ts, eid, region in dq:
            dist = region_distance_km(region, event.geo_region)
            if dist is not None and dist >= km_limit and (best is None or dist > best[0]):
                best = (dist, ts, eid)
        dq.append((event.timestamp, event.event_id, event.geo_region))
        if best is None:
            return None
        if not self._suppression_ok(policy, event.user_id, event.timestamp):
            return None
        return self._fire(
            policy, event.user_id, event, [best[2], event.event_id], best[0], float(km_limit), best[1]
        )

    def _eval_privilege_escalation(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        granted = event.raw_extra.get("privilege_granted", "")
        if granted not in ("High", "Admin"):
            return None
        if event.raw_extra.get("approved") == "true":
            return None
        if not self._suppression_ok(policy, event.user_id, event.timestamp):
            return None
        return self._fire(policy, event.user_id, event, [event.event_id], 1.0, 1.0, event.timestamp)

    def _eval_untrusted_device(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        params = policy.trigger.params
        if not self._matches_activities(event, params) or not self._matches_app(event, params):
            return None
        mode = params.get("mode", "trust")
        fired = False
        if mode == "history":
            seen = self._seen_devices.setdefault(event.user_id, set())
            fired = bool(seen) and event.device_id not in seen
        else:
            trust_in = params.get("trust_in", [DeviceTrust.UNMANAGED.value, DeviceTrust.UNKNOWN.value])
            fired = event.device_trust.value in trust_in
        if not fired or not self._suppression_ok(policy, event.user_id, event.timestamp):
            return None
        return self._fire(policy, event.user_id, event, [event.event_id], 1.0, 1.0, event.timestamp)

    def _eval_external_share(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        params = policy.trigger.params
        if not self._matches_app(event, params):
            return None
        acts = params.get("activities", [Activity.FILE_SHARE_EXTERNAL.value])
        if acts and event.activity.value not in acts:
            return None
        target = event.raw_extra.get(params.get("target_field", "recipient"), "")
        if not target:
            return None
        allow = {d.lower() for d in params.get("allowlist", [])}
        if self._domain_of(target) in allow or target.lower() in allow:
            return None
        if params.get("require_sensitive") and not self._is_sensitive(event, ctx):
            return None
        if not self._suppression_ok(policy, event.user_id, event.timestamp):
            return None
        return self._fire(policy, event.user_id, event, [event.event_id], 1.0, 1.0, event.timestamp)

    def _eval_sensitive_access(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        params = policy.trigger.params
        if not self._matches_app(event, params):
            return None
        acts = params.get("activities") or _FILE_ACTIVITIES
        if event.activity.value not in acts:
            return None
        if not self._is_sensitive(event, ctx):
            return None
        if params.get("require_unencrypted") and event.raw_extra.get("encrypted") != "false":
            return None
        if params.get("check_acl", True) and self.aux.acl_allows(event.user_id):
            return None
        if not self._suppression_ok(policy, event.user_id, event.timestamp):
            return None
        return self._fire(policy, event.user_id, event, [event.event_id], 1.0, 1.0, event.timestamp)

    def _eval_mass_deletion(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        params = policy.trigger.params
        if event.activity is not Activity.FILE_DELETE or not self._matches_app(event, params):
            return None
        dq = self._deque_for(policy, event.user_id)
        dq.append((event.timestamp, event.event_id, event.device_id))
        cutoff = event.timestamp - policy.trigger.window()
        while dq and dq[0][0] < cutoff:
            dq.popleft()
        threshold = params["threshold"]
        if len(dq) < threshold:
            return None
        if not self._suppression_ok(policy, event.user_id, event.timestamp):
            return None
        return self._fire(
            policy, event.user_id, event, [eid for _, eid, _ in dq], float(len(dq)), float(threshold), dq[0][0]
        )

    def _eval_storage_location(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        if event.activity.value not in _FILE_ACTIVITIES:
            return None
        if not self._is_sensitive(event, ctx):
            return None
        path = event.raw_extra.get("path") or ctx.file_paths.get(event.file_id or "", "")
        if not path:
            return None
        approved = policy.trigger.params.get("approved_paths") or self.aux.approved_paths
        if any(path.startswith(prefix) for prefix in approved):
            return None
        if not self._suppression_ok(policy, event.user_id, event.timestamp):
            return None
        return self._fire(policy, event.user_id, event, [event.event_id], 1.0, 1.0, event.timestamp)

    def _eval_public_link(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        if event.activity is not Activity.FILE_SHARE_EXTERNAL:
            return None
        if event.raw_extra.get("recipient", "") != "":
            return None
        if not self._suppression_ok(policy, event.user_id, event.timestamp):
            return None
        return self._fire(policy, event.user_id, event, [event.event_id], 1.0, 1.0, event.timestamp)

    def _eval_baseline_deviation(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        params = policy.trigger.params
        activity = params.get("activity")
        if activity and event.activity.value != activity:
            return None
        if not self._matches_app(event, params):
            return None
        hit = evaluate_baseline(
            event, self.baselines, z_limit=params.get("z", 3.0), floor=params.get("floor", 10)
        )
        if hit is None:
            return None
        if not self._suppression_ok(policy, event.user_id, event.timestamp):
            return None
        observed, limit = hit
        return self._fire(policy, event.user_id, event, [event.event_id], observed, limit, event.timestamp)

    def _eval_privilege_spread(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        roles = self.aux.roles.get(event.user_id, [])
        systems = {r.get("system") for r in roles if r.get("privileged")}
        min_systems = policy.trigger.params.get("min_systems", 3)
        if len(systems) < min_systems:
            return None
        if not self._suppression_ok(policy, event.user_id, event.timestamp):
            return None
        return self._fire(
            policy, event.user_id, event, [event.event_id], float(len(systems)), float(min_systems), event.timestamp
        )

    def _eval_outdated_software(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        if self.device_registry is None or not self.aux.min_versions:
            return None
        installed = self.device_registry.os_version(event.device_id)
        if not installed or ":" not in installed:
            return None
        os_name, version = installed.split(":", 1)
        minimum = self.aux.min_versions.get(os_name)
        if minimum is None or _version_tuple(version) >= _version_tuple(minimum):
            return None
        subject = event.device_id
        if not self._suppression_ok(policy, subject, event.timestamp):
            return None
        return self._fire(policy, subject, event, [event.event_id], 1.0, 1.0, event.timestamp)

    def _eval_high_risk_spread(self, policy: Policy, event: ActivityEvent, ctx: PolicyContext) -> Optional[PolicyViolation]:
        if ctx.user is None or ctx.user.privilege is not Privilege.HIGH:
            return None
        tagged = event.raw_extra.get("risk_tag") == "high" or (
            event.file_id and event.file_id in self.aux.high_risk_resources
        )
        if not tagged or not event.file_id:
            return None
        dq = self._deque_for(policy, event.user_id)
        dq.append((event.timestamp, event.event_id, event.file_id))
        cutoff = event.timestamp - policy.trigger.window()
        while dq and dq[0][0] < cutoff:
            dq.popleft()
        threshold = policy.trigger.params.get("threshold", 5)
        distinct = {fid for _, _, fid in dq}
        if len(distinct) < threshold:
            return None
        if not self._suppression_ok(policy, event.user_id, event.timestamp):
            return None
        return self._fire(
            policy, event.user_id, event, [eid for _, eid, _ in dq], float(len(distinct)), float(threshold), dq[0][0]
        )

    _EVALUATORS = {
        TriggerKind.COUNT_IN_WINDOW: _eval_count,
        TriggerKind.BYTES_IN_WINDOW: _eval_bytes,
        TriggerKind.GEO_DISTANCE_IN_WINDOW: _eval_geo,
        TriggerKind.PRIVILEGE_ESCALATION: _eval_privilege_escalation,
        TriggerKind.UNTRUSTED_DEVICE: _eval_untrusted_device,
        TriggerKind.EXTERNAL_SHARE: _eval_external_share,
        TriggerKind.SENSITIVE_ACCESS: _eval_sensitive_access,
        TriggerKind.MASS_DELETION: _eval_mass_deletion,
        TriggerKind.STORAGE_LOCATION: _eval_storage_location,
        TriggerKind.PUBLIC_LINK: _eval_public_link,
        TriggerKind.BASELINE_DEVIATION: _eval_baseline_deviation,
        TriggerKind.EXCESSIVE_PRIVILEGE_SPREAD: _eval_privilege_spread,
        TriggerKind.OUTDATED_SOFTWARE: _eval_outdated_software,
        TriggerKind.HIGH_RISK_ACCESS_SPREAD: _eval_high_risk_spread,
    }

    def evaluate(self, event: ActivityEvent, ctx: PolicyContext | None = None) -> list[PolicyViolation]:
        """Run every enabled policy against one enriched event."""
        ctx = ctx or PolicyContext()
        self.baselines.observe(event)
        violations = []
        for policy in self.policies:
            result = self._EVALUATORS[policy.trigger.kind](self, policy, event, ctx)
            if result is not None:
                violations.append(result)
        self._seen_devices.setdefault(event.user_id, set()).add(event.device_id)
        return violations

    # -- actions ----------------------------------------------------------------

    def apply_action(self, violation: PolicyViolation, policy: Policy) -> ActionRecord:
        """Record the policy's simulated action; replaying a violation is an error."""
        if violation.violation_id in self._actioned:
            raise DuplicateAction(violation.violation_id)
        self._actioned.add(violation.violation_id)
        target = violation.device_id if policy.action is Action.DISCONNECT_DEVICE else violation.subject
        record = ActionRecord(
            action=policy.action,
            target=target,
            executed_at=violation.fired_at,
            operator_note=f"policy {policy.policy_id}",
        )
        self.shadow_registry[target] = policy.action.value
        violation.action_taken = record
        return record

    def policy_by_id(self, policy_id: str) -> Optional[Policy]:
        for p in self.policies:
            if p.policy_id == policy_id:
                return p
        return None


# ---------------------------------------------------------------------------
# Policy loading
# ---------------------------------------------------------------------------

_REQUIRED_PARAMS: dict[TriggerKind, set[str]] = {
    TriggerKind.COUNT_IN_WINDOW: {"threshold", "window_s"},
    TriggerKind.BYTES_IN_WINDOW: {"window_s"},
    TriggerKind.GEO_DISTANCE_IN_WINDOW: {"km_threshold", "window_s"},
    TriggerKind.MASS_DELETION: {"threshold", "window_s"},
    TriggerKind.HIGH_RISK_ACCESS_SPREAD: {"threshold", "window_s"},
    TriggerKind.EXCESSIVE_PRIVILEGE_SPREAD: {"min_systems"},
    TriggerKind.BASELINE_DEVIATION: {"activity"},
}

_POSITIVE_PARAMS = {"threshold", "window_s", "km_threshold", "count_threshold", "bytes_threshold", "min_systems", "z", "floor"}


def load_policies(doc: dict | str | Path, strict: bool = True) -> list[Policy]:
    """Parse a policy config document; invalid entries raise with per-entry context.

    With ``strict=False`` invalid entries are dropped and only valid policies
    are returned.
    """
    if isinstance(doc, (str, Path)):
        doc = json.loads(Path(doc).read_text())
    entries = doc.get("policies", doc if isinstance(doc, list) else [])
    policies: list[Policy] = []
    problems: list[str] = []
    seen_ids: set[str] = set()

    for i, entry in enumerate(entries):
        where = f"policies[{i}]"
        try:
            policy_id = entry["policy_id"]
            if policy_id in seen_ids:
                raise ValueError(f"duplicate policy_id {policy_id!r}")
            kind = TriggerKind(entry["trigger"]["kind"])
            params = dict(entry["trigger"].get("params", {}))
            missing = _REQUIRED_PARAMS.get(kind, set()) - params.keys()
            if missing:
                raise ValueError(f"missing params {sorted(missing)} for {kind.value}")
            for key in _POSITIVE_PARAMS & params.keys():
                if not isinstance(params[key], (int, float)) or params[key] <= 0:
                    raise ValueError(f"param {key} must be a positive number, got {params[key]!r}")
            if kind is TriggerKind.BYTES_IN_WINDOW and not (
                "count_threshold" in params or "bytes_threshold" in params
            ):
                raise ValueError("BytesInWindow needs count_threshold or bytes_threshold")
            policy = Policy(
                policy_id=policy_id,
                name=entry.get("name", policy_id),
                category=PolicyCategory(entry["category"]),
                trigger=TriggerSpec(kind=kind, params=params),
                severity=Severity(entry.get("severity", "Medium")),
                action=Action(entry.get("action", "AlertOnly")),
                enabled=entry.get("enabled", True),
            )
            seen_ids.add(policy_id)
            policies.append(policy)
        except (KeyError, ValueError, TypeError) as exc:
            problems.append(f"{where}: {exc}")

    if problems and strict:
        raise PolicyConfigError(f"{len(problems)} invalid policy entries", entries=problems)
    return policies


MB = 1024 * 1024

DEFAULT_POLICY_DOC: dict = {
    "policies": [
        # -- user risk --
        {
            "policy_id": "suspicious-login-activity",
            "name": "Suspicious Login Activity",
            "category": "UserRisk",
            "severity": "High",
            "action": "AlertOnly",
            "trigger": {"kind": "CountInWindow", "params": {"activities": ["LoginFailed"], "threshold": 5, "window_s": 300}},
        },
        {
            "policy_id": "unusual-location-access",
            "name": "Unusual Location Access",
            "category": "UserRisk",
            "severity": "Medium",
            "action": "AlertOnly",
            "trigger": {"kind": "CountInWindow", "params": {"activities": ["Login"], "threshold": 1, "window_s": 3600, "region_allowlist": ["US-CA", "US-NY", "US-TX", "US-WA"]}},
        },
        {
            "policy_id": "privilege-escalation-unauthorized",
            "name": "Privileged Escalation Without Authorization",
            "category": "UserRisk",
            "severity": "Critical",
            "action": "RevokePrivilege",
            "trigger": {"kind": "PrivilegeEscalation", "params": {"window_s": 86400}},
        },
        {
            "policy_id": "login-untrusted-device",
            "name": "Login from Untrusted Device",
            "category": "UserRisk",
            "severity": "High",
            "action": "DisconnectDevice",
            "trigger": {"kind": "UntrustedDevice", "params": {"mode": "history", "activities": ["Login"], "window_s": 86400}},
        },
        # -- data movement --
        {
            "policy_id": "mass-data-download",
            "name": "Mass Data Download",
            "category": "DataMovement",
            "severity": "High",
            "action": "RestrictFileAccess",
            "trigger": {"kind": "BytesInWindow", "params": {"activities": ["FileRead"], "count_threshold": 100, "bytes_threshold": 500 * MB, "window_s": 3600}},
        },
        {
            "policy_id": "external-share-sensitive",
            "name": "External Sharing of Sensitive Data",
            "category": "DataMovement",
            "severity": "Critical",
            "action": "RestrictFileAccess",
            "trigger": {"kind": "ExternalShare", "params": {"require_sensitive": True, "allowlist": ["corp.example.com", "partner.example.com"], "window_s": 3600}},
        },
        {
            "policy_id": "unapproved-cloud-sync",
            "name": "Unapproved Cloud Sync",
            "category": "DataMovement",
            "severity": "Medium",
            "action": "AlertOnly",
            "trigger": {"kind": "ExternalShare", "params": {"target_field": "sync_target", "allowlist": ["corp-backup"], "activities": [], "window_s": 3600}},
        },
        {
            "policy_id": "unencrypted-file-transfer",
            "name": "Unencrypted File Transfers",
            "category": "DataMovement",
            "severity": "High",
            "action": "RestrictFileAccess",
            "trigger": {"kind": "SensitiveAccess", "params": {"require_unencrypted": True, "check_acl": False, "activities": ["FileUpload", "FileMove", "FileShareExternal", "FileShareInternal", "AttachmentShare"], "window_s": 3600}},
        },
        # -- attack path --
        {
            "policy_id": "excessive-privilege-spread",
            "name": "Open Attack Paths via Misconfigured Access Controls",
            "category": "AttackPath",
            "severity": "High",
            "action": "RevokePrivilege",
            "trigger": {"kind": "ExcessivePrivilegeSpread", "params": {"min_systems": 3, "window_s": 604800}},
        },
        {
            "policy_id": "outdated-software",
            "name": "Unpatched Vulnerability Exploitation",
            "category": "AttackPath",
            "severity": "Medium",
            "action": "DisconnectDevice",
            "trigger": {"kind": "OutdatedSoftware", "params": {"window_s": 604800}},
        },
        {
            "policy_id": "high-risk-access-spread",
            "name": "Multiple High-Risk Access Points",
            "category": "AttackPath",
            "severity": "Critical",
            "action": "FlagUser",
            "trigger": {"kind": "HighRiskAccessSpread", "params": {"threshold": 5, "window_s": 86400}},
        },
        # -- activity risk --
        {
            "policy_id": "excessive-login-failures-devices",
            "name": "Excessive Login Failures",
            "category": "ActivityRisk",
            "severity": "High",
            "action": "FlagUser",
            "trigger": {"kind": "CountInWindow", "params": {"activities": ["LoginFailed"], "threshold": 5, "window_s": 600, "distinct_devices_min": 2}},
        },
        {
            "policy_id": "simultaneous-geo-logins",
            "name": "Simultaneous Logins from Multiple Locations",
            "category": "ActivityRisk",
            "severity": "High",
            "action": "FlagUser",
            "trigger": {"kind": "GeoDistanceInWindow", "params": {"km_threshold": 500, "window_s": 3600}},
        },
        {
            "policy_id": "unusual-device-access",
            "name": "Unusual Device Access",
            "category": "ActivityRisk",
            "severity": "Medium",
            "action": "AlertOnly",
            "trigger": {"kind": "UntrustedDevice", "params": {"mode": "trust", "trust_in": ["Unmanaged", "Unknown"], "activities": ["Login"], "window_s": 86400}},
        },
        # -- data risk --
        {
            "policy_id": "unauthorized-sensitive-access",
            "name": "Unauthorized Access to Sensitive Data",
            "category": "DataRisk",
            "severity": "High",
            "action": "RestrictFileAccess",
            "trigger": {"kind": "SensitiveAccess", "params": {"check_acl": True, "window_s": 3600}},
        },
        {
            "policy_id": "mass-deletion-critical",
            "name": "Mass Deletion of Critical Files",
            "category": "DataRisk",
            "severity": "Critical",
            "action": "FlagUser",
            "trigger": {"kind": "MassDeletion", "params": {"threshold": 50, "window_s": 3600}},
        },
        {
            "policy_id": "storage-policy-violation",
            "name": "Storage Policy Violation",
            "category": "DataRisk",
            "severity": "Medium",
            "action": "AlertOnly",
            "trigger": {"kind": "StorageLocation", "params": {"window_s": 86400}},
        },
        # -- data collaboration --
        {
            "policy_id": "confidential-external-share",
            "name": "Sharing of Confidential Documents with External Parties",
            "category": "DataCollaboration",
            "severity": "High",
            "action": "RestrictFileAccess",
            "trigger": {"kind": "ExternalShare", "params": {"require_sensitive": True, "allowlist": ["corp.example.com"], "window_s": 3600}},
        },
        {
            "policy_id": "public-link-internal-data",
            "name": "Public File Link Creation for Internal Data",
            "category": "DataCollaboration",
            "severity": "High",
            "action": "RestrictFileAccess",
            "trigger": {"kind": "PublicLink", "params": {"window_s": 3600}},
        },
        {
            "policy_id": "abnormal-collab-behavior",
            "name": "Abnormal Collaboration Behavior",
            "category": "DataCollaboration",
            "severity": "Medium",
            "action": "AlertOnly",
            "trigger": {"kind": "CountInWindow", "params": {"activities": ["FileShareExternal", "FileShareInternal", "AttachmentShare"], "threshold": 20, "window_s": 3600}},
        },
        # -- platform behavior anomalies --
        {
            "policy_id": "sharepoint-bulk-update",
            "name": "SharePoint Abnormal File Updates",
            "category": "BehaviorAnomaly",
            "severity": "Medium",
            "action": "AlertOnly",
            "trigger": {"kind": "BaselineDeviation", "params": {"activity": "FileWrite", "app": "SharePoint", "z": 3, "floor": 10}},
        },
        {
            "policy_id": "onedrive-noncompliant-device",
            "name": "OneDrive Access from Non-Compliant Device",
            "category": "BehaviorAnomaly",
            "severity": "Medium",
            "action": "AlertOnly",
            "trigger": {"kind": "UntrustedDevice", "params": {"mode": "trust", "trust_in": ["ManagedNonCompliant", "Unmanaged"], "app": "OneDrive", "activities": [], "window_s": 86400}},
        },
        {
            "policy_id": "gdrive-mass-deletion",
            "name": "Google Drive Mass File Deletion",
            "category": "BehaviorAnomaly",
            "severity": "High",
            "action": "FlagUser",
            "trigger": {"kind": "MassDeletion", "params": {"threshold": 20, "window_s": 3600, "app": "GoogleDrive"}},
        },
        {
            "policy_id": "teams-external-share",
            "name": "Teams Suspicious External File Sharing",
            "category": "BehaviorAnomaly",
            "severity": "High",
            "action": "AlertOnly",
            "trigger": {"kind": "ExternalShare", "params": {"allowlist": ["corp.example.com"], "app": "Teams", "window_s": 3600}},
        },
        {
            "policy_id": "box-bulk-download",
            "name": "Box Bulk Unauthorized Downloads",
            "category": "BehaviorAnomaly",
            "severity": "High",
            "action": "RestrictFileAccess",
            "trigger": {"kind": "BytesInWindow", "params": {"activities": ["FileRead"], "app": "Box", "count_threshold": 50, "bytes_threshold": 250 * MB, "window_s": 3600}},
        },
    ]
}


def default_policies() -> list[Policy]:
    return load_policies(DEFAULT_POLICY_DOC)
