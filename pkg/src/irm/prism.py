"""Rule-based session risk scoring.

A session's raw score is a weighted sum of factor points (activity, app
context, IP reputation, business hours, device compliance, cumulative
activity) scaled by a privilege multiplier, then min-max normalized into
[0, 1] and banded Low / Moderate / High.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptySession
from .events import (
    Activity,
    ActivityEvent,
    AppContext,
    DeviceTrust,
    IpLists,
    Privilege,
    Session,
    UserRecord,
)


class Band(str, Enum):
    LOW = "Low"
    MODERATE = "Moderate"
    HIGH = "High"


class Scorer(str, Enum):
    PRISM = "PRISM"
    AIRS = "AIRS"
    BLENDED = "BLENDED"


DEFAULT_ACTIVITY_POINTS: dict[Activity, float] = {
    Activity.FILE_UPLOAD: 1.0,
    Activity.FILE_CREATE: 2.0,
    Activity.ATTACHMENT_SHARE: 3.0,
    Activity.ATTACHMENT_EDIT: 3.0,
    Activity.FILE_RENAME: 4.0,
    Activity.FILE_MOVE: 4.0,
    Activity.FILE_SHARE_EXTERNAL: 7.0,
    Activity.FILE_DELETE: 8.0,
}


@dataclass
class CumulativeConfig:
    window: timedelta = timedelta(hours=1)
    free_actions: int = 20
    per_action_points: float = 1.0


@dataclass
class PrismConfig:
    w_activity: float = 1.0
    w_context: float = 1.0
    w_ip: float = 1.0
    w_hours: float = 1.0
    w_device: float = 1.0
    w_cumulative: float = 1.0
    activity_points: dict[Activity, float] = field(
        default_factory=lambda: dict(DEFAULT_ACTIVITY_POINTS)
    )
    app_context_points: dict[AppContext, float] = field(default_factory=dict)
    ip_unknown_points: float = 5.0
    off_hours_points: float = 5.0
    device_adverse_points: float = 5.0
    privilege_multipliers: dict[Privilege, float] = field(
        default_factory=lambda: {
            Privilege.HIGH: 0.7,
            Privilege.MODERATE: 0.9,
            Privilege.LOW: 1.1,
            Privilege.GUEST: 1.1,
        }
    )
    business_hours: tuple[int, int] = (9, 17)
    tz_offset_minutes: int = 0
    r_min: float = 0.0
    r_max: float = 100.0
    band_moderate: float = 0.3
    band_high: float = 0.6
    alert_threshold: float = 0.3
    cumulative: CumulativeConfig = field(default_factory=CumulativeConfig)

    def __post_init__(self):
        if self.r_max <= self.r_min:
            raise ValueError("r_max must exceed r_min")
        if not (0.0 <= self.band_moderate <= self.band_high <= 1.0):
            raise ValueError("band boundaries must cover [0,1] without gaps")
        if any(m <= 0 for m in self.privilege_multipliers.values()):
            raise ValueError("privilege multipliers must be positive")
        for name in ("w_activity", "w_context", "w_ip", "w_hours", "w_device", "w_cumulative"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_json(cls, path: str | Path) -> "PrismConfig":
        doc = json.loads(Path(path).read_text())
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "PrismConfig":
        kwargs: dict = {}
        scalar_keys = {
            "w_activity", "w_context", "w_ip", "w_hours", "w_device", "w_cumulative",
            "ip_unknown_points", "off_hours_points", "device_adverse_points",
            "r_min", "r_max", "band_moderate", "band_high", "alert_threshold",
            "tz_offset_minutes",
        }
        for key in scalar_keys & doc.keys():
            kwargs[key] = doc[key]
        if "activity_points" in doc:
            kwargs["activity_points"] = {Activity(k): float(v) for k, v in doc["activity_points"].items()}
        if "app_context_points" in doc:
            kwargs["app_context_points"] = {AppContext(k): float(v) for k, v in doc["app_context_points"].items()}
        if "privilege_multipliers" in doc:
            kwargs["privilege_multipliers"] = {Privilege(k): float(v) for k, v in doc["privilege_multipliers"].items()}
        if "business_hours" in doc:
            kwargs["business_hours"] = tuple(doc["business_hours"])
        if "cumulative" in doc:
            c = doc["cumulative"]
            kwargs["cumulative"] = CumulativeConfig(
                window=timedelta(seconds=c.get("window_s", 3600)),
                free_actions=c.get("free_actions", 20),
                per_action_points=c.get("per_action_points", 1.0),
            )
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "w_activity": self.w_activity,
            "w_context": self.w_context,
            "w_ip": self.w_ip,
            "w_hours": self.w_hours,
            "w_device": self.w_device,
            "w_cumulative": self.w_cumulative,
            "activity_points": {a.value: p for a, p in self.activity_points.items()},
            "app_context_points": {a.value: p for a, p in self.app_context_points.items()},
            "ip_unknown_points": self.ip_unknown_points,
            "off_hours_points": self.off_hours_points,
            "device_adverse_points": self.device_adverse_points,
            "privilege_multipliers": {p.value: m for p, m in self.privilege_multipliers.items()},
            "business_hours": list(self.business_hours),
            "tz_offset_minutes": self.tz_offset_minutes,
            "r_min": self.r_min,
            "r_max": self.r_max,
            "band_moderate": self.band_moderate,
            "band_high": self.band_high,
            "alert_threshold": self.alert_threshold,
            "cumulative": {
                "window_s": self.cumulative.window.total_seconds(),
                "free_actions": self.cumulative.free_actions,
                "per_action_points": self.cumulative.per_action_points,
            },
        }


@dataclass
class FactorBreakdown:
    activity: float = 0.0
    context: float = 0.0
    ip: float = 0.0
    hours: float = 0.0
    device: float = 0.0
    cumulative: float = 0.0
    privilege_multiplier: float = 1.0
    per_event: list[tuple[str, float]] = field(default_factory=list)

    def recompute_raw(self, cfg: PrismConfig) -> float:
        return (
            cfg.w_activity * self.activity
            + cfg.w_context * self.context
            + cfg.w_ip * self.ip
            + cfg.w_hours * self.hours
            + cfg.w_device * self.device
            + cfg.w_cumulative * self.cumulative
        ) * self.privilege_multiplier

    def to_dict(self) -> dict:
        return {
            "activity": self.activity,
            "context": self.context,
            "ip": self.ip,
            "hours": self.hours,
            "device": self.device,
            "cumulative": self.cumulative,
            "privilege_multiplier": self.privilege_multiplier,
            "per_event": [[eid, pts] for eid, pts in self.per_event],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FactorBreakdown":
        return cls(
            activity=d.get("activity", 0.0),
            context=d.get("context", 0.0),
            ip=d.get("ip", 0.0),
            hours=d.get("hours", 0.0),
            device=d.get("device", 0.0),
            cumulative=d.get("cumulative", 0.0),
            privilege_multiplier=d.get("privilege_multiplier", 1.0),
            per_event=[(e, p) for e, p in d.get("per_event", [])],
        )


@dataclass
class RiskScore:
    raw: float
    normalized: float
    band: Band
    scorer: Scorer
    breakdown: FactorBreakdown
    subject: str

    def to_dict(self) -> dict:
        return {
            "raw": self.raw,
            "normalized": self.normalized,
            "band": self.band.value,
            "scorer": self.scorer.value,
            "breakdown": self.breakdown.to_dict(),
            "subject": self.subject,
        }


def activity_points(event: ActivityEvent, cfg: PrismConfig) -> float:
    return cfg.activity_points.get(event.activity, 0.0)


def context_points(event: ActivityEvent, cfg: PrismConfig) -> float:
    return cfg.app_context_points.get(event.app_context, 0.0)


def ip_points(event: ActivityEvent, ip_lists: IpLists | None, cfg: PrismConfig) -> float:
    """Trusted -> 0; unknown or blacklisted -> points; no recorded IP -> 0."""
    if not event.ip_address:
        return 0.0
    if ip_lists is not None:
        cls = ip_lists.classify(event.ip_address)
    else:
        cls = event.raw_extra.get("ip_class", "unknown")
    return 0.0 if cls == "trusted" else cfg.ip_unknown_points


def hours_points(event: ActivityEvent, cfg: PrismConfig) -> float:
    local = event.timestamp + timedelta(minutes=cfg.tz_offset_minutes)
    start, end = cfg.business_hours
    return 0.0 if start <= local.hour < end else cfg.off_hours_points


def device_points(event: ActivityEvent, cfg: PrismConfig) -> float:
    p = cfg.device_adverse_points
    trust = event.device_trust
    if trust is DeviceTrust.MANAGED_COMPLIANT:
        return 0.0
    if trust is DeviceTrust.UNMANAGED and event.raw_extra.get("device_noncompliant") == "true":
        return 2 * p  # both adverse flags stack
    return p


def cumulative_points(
    session: Session,
    history: Iterable[datetime],
    cfg: PrismConfig,
) -> float:
    """Progressive points for action volume beyond the free allowance.

    ``history`` holds the user's event timestamps near the session; only
    those within the window ending at session end are counted.
    """
    window_start = session.end - cfg.cumulative.window
    n = sum(1 for ts in history if window_start < ts <= session.end)
    return max(0, n - cfg.cumulative.free_actions) * cfg.cumulative.per_action_points


def normalize(raw: float, cfg: PrismConfig) -> float:
    value = (raw - cfg.r_min) / (cfg.r_max - cfg.r_min)
    return min(1.0, max(0.0, value))


def band_for(normalized: float, cfg: PrismConfig) -> Band:
    if normalized < cfg.band_moderate:
        return Band.LOW
    if normalized < cfg.band_high:
        return Band.MODERATE
    return Band.HIGH


def score_session(
    session: Session,
    user: UserRecord,
    cfg: PrismConfig,
    ip_lists: IpLists | None = None,
    recent_activity: Sequence[datetime] = (),
) -> RiskScore:
    """Score one session. Session-level factors (context, IP, hours, device)
    count once, taken from the worst-case event; activity points accumulate
    per event."""
    if not session.events:
        raise EmptySession(f"session {session.session_id} has no events")

    breakdown = FactorBreakdown(
        privilege_multiplier=cfg.privilege_multipliers[user.privilege]
    )
    for event in session.events:
        pts = activity_points(event, cfg)
        breakdown.per_event.append((event.event_id, pts))
        breakdown.activity += pts
        breakdown.context = max(breakdown.context, context_points(event, cfg))
        breakdown.ip = max(breakdown.ip, ip_points(event, ip_lists, cfg))
        breakdown.hours = max(breakdown.hours, hours_points(event, cfg))
        breakdown.device = max(breakdown.device, device_points(event, cfg))
    breakdown.cumulative = cumulative_points(session, recent_activity, cfg)

    raw = breakdown.recompute_raw(cfg)
    norm = normalize(raw, cfg)
    return RiskScore(
        raw=raw,
        normalized=norm,
        band=band_for(norm, cfg),
        scorer=Scorer.PRISM,
        breakdown=breakdown,
        subject=session.session_id,
    )
