"""Log ingestion: CERT-style CSV parsing, enrichment, and sessionization.

Rows come from ``logon.csv`` / ``device.csv`` / ``file.csv`` directories.
A column-mapping config lets non-CERT fixtures carry richer columns
(activity verbs, IPs, share recipients, ...); unmapped extras land in
``raw_extra`` so downstream policies can key off them.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .errors import BadTimestamp, MalformedRow, UnknownActivity

CERT_TS_FORMAT = "%m/%d/%Y %H:%M:%S"

# Events outside these bounds are rejected as BadTimestamp.
DEFAULT_MIN_TS = datetime(1990, 1, 1, tzinfo=timezone.utc)
DEFAULT_MAX_TS = datetime(2100, 1, 1, tzinfo=timezone.utc)


class Source(str, Enum):
    LOGON = "logon"
    DEVICE = "device"
    FILE = "file"


class Activity(str, Enum):
    LOGIN = "Login"
    LOGIN_FAILED = "LoginFailed"
    LOGOUT = "Logout"
    DEVICE_CONNECT = "DeviceConnect"
    DEVICE_DISCONNECT = "DeviceDisconnect"
    FILE_UPLOAD = "FileUpload"
    FILE_CREATE = "FileCreate"
    FILE_READ = "FileRead"
    FILE_WRITE = "FileWrite"
    FILE_RENAME = "FileRename"
    FILE_MOVE = "FileMove"
    FILE_DELETE = "FileDelete"
    FILE_SHARE_EXTERNAL = "FileShareExternal"
    FILE_SHARE_INTERNAL = "FileShareInternal"
    ATTACHMENT_SHARE = "AttachmentShare"
    ATTACHMENT_EDIT = "AttachmentEdit"


class AppContext(str, Enum):
    SHAREPOINT = "SharePoint"
    ONEDRIVE = "OneDrive"
    GOOGLE_DRIVE = "GoogleDrive"
    TEAMS = "Teams"
    BOX = "Box"
    LOCAL_FS = "LocalFS"
    UNKNOWN = "Unknown"


class DeviceTrust(str, Enum):
    MANAGED_COMPLIANT = "ManagedCompliant"
    MANAGED_NONCOMPLIANT = "ManagedNonCompliant"
    UNMANAGED = "Unmanaged"
    UNKNOWN = "Unknown"


class Privilege(str, Enum):
    HIGH = "High"
    MODERATE = "Moderate"
    LOW = "Low"
    GUEST = "Guest"


ACTIVITIES_BY_SOURCE = {
    Source.LOGON: {Activity.LOGIN, Activity.LOGIN_FAILED, Activity.LOGOUT},
    Source.DEVICE: {Activity.DEVICE_CONNECT, Activity.DEVICE_DISCONNECT},
    Source.FILE: {
        Activity.FILE_UPLOAD, Activity.FILE_CREATE, Activity.FILE_READ,
        Activity.FILE_WRITE, Activity.FILE_RENAME, Activity.FILE_MOVE,
        Activity.FILE_DELETE, Activity.FILE_SHARE_EXTERNAL,
        Activity.FILE_SHARE_INTERNAL, Activity.ATTACHMENT_SHARE,
        Activity.ATTACHMENT_EDIT,
    },
}


@dataclass
class ActivityEvent:
    event_id: str
    timestamp: datetime
    user_id: str
    device_id: str
    source: Source
    activity: Activity
    app_context: AppContext = AppContext.UNKNOWN
    ip_address: Optional[str] = None
    geo_region: Optional[str] = None
    device_trust: DeviceTrust = DeviceTrust.UNKNOWN
    file_id: Optional[str] = None
    raw_extra: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "timestamp": self.timestamp.strftime("%Y-%m-%dT%H:%M:%S"),
            "user_id": self.user_id,
            "device_id": self.device_id,
            "source": self.source.value,
            "activity": self.activity.value,
            "app_context": self.app_context.value,
            "ip_address": self.ip_address,
            "geo_region": self.geo_region,
            "device_trust": self.device_trust.value,
            "file_id": self.file_id,
            "raw_extra": self.raw_extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActivityEvent":
        return cls(
            event_id=d["event_id"],
            timestamp=datetime.strptime(d["timestamp"], "%Y-%m-%dT%H:%M:%S").replace(
                tzinfo=timezone.utc
            ),
            user_id=d["user_id"],
            device_id=d["device_id"],
            source=Source(d["source"]),
            activity=Activity(d["activity"]),
            app_context=AppContext(d.get("app_context", "Unknown")),
            ip_address=d.get("ip_address"),
            geo_region=d.get("geo_region"),
            device_trust=DeviceTrust(d.get("device_trust", "Unknown")),
            file_id=d.get("file_id"),
            raw_extra=dict(d.get("raw_extra") or {}),
        )


@dataclass
class UserRecord:
    user_id: str
    display_name: str = ""
    role: str = ""
    privilege: Privilege = Privilege.LOW
    department: str = ""


@dataclass
class Session:
    session_id: str
    user_id: str
    device_id: str
    start: datetime
    end: datetime
    events: list[ActivityEvent] = field(default_factory=list)


def parse_cert_timestamp(
    text: str,
    min_ts: datetime = DEFAULT_MIN_TS,
    max_ts: datetime = DEFAULT_MAX_TS,
) -> datetime:
    try:
        ts = datetime.strptime(text.strip(), CERT_TS_FORMAT).replace(tzinfo=timezone.utc)
    except ValueError as exc:
        raise BadTimestamp(f"unparseable timestamp {text!r}") from exc
    if not (min_ts <= ts <= max_ts):
        raise BadTimestamp(f"timestamp {text!r} outside configured bounds")
    return ts


def format_cert_timestamp(ts: datetime) -> str:
    return ts.strftime(CERT_TS_FORMAT)


def file_id_for(filename: str) -> str:
    return "f-" + hashlib.sha1(filename.encode("utf-8")).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Column mapping
# ---------------------------------------------------------------------------

# Column names with first-class meaning; anything else is kept in raw_extra.
KNOWN_COLUMNS = {"id", "date", "user", "pc", "activity", "filename", "content", "ip", "app", "region"}

DEFAULT_LOGON_MAP = {
    "columns": ["id", "date", "user", "pc", "activity"],
    "activity_map": {"Logon": "Login", "Logoff": "Logout", "LogonFailed": "LoginFailed"},
}
DEFAULT_DEVICE_MAP = {
    "columns": ["id", "date", "user", "pc", "activity"],
    "activity_map": {"Connect": "DeviceConnect", "Disconnect": "DeviceDisconnect"},
}
DEFAULT_FILE_MAP = {
    "columns": ["id", "date", "user", "pc", "filename", "content"],
    "activity_map": {},
    "default_activity": "FileWrite",
}


@dataclass
class ColumnMapping:
    """Per-source column layout for CSV rows; defaults match CERT r4.2."""

    logon: dict = field(default_factory=lambda: dict(DEFAULT_LOGON_MAP))
    device: dict = field(default_factory=lambda: dict(DEFAULT_DEVICE_MAP))
    file: dict = field(default_factory=lambda: dict(DEFAULT_FILE_MAP))

    @classmethod
    def from_json(cls, path: str | Path) -> "ColumnMapping":
        doc = json.loads(Path(path).read_text())
        mapping = cls()
        for key in ("logon", "device", "file"):
            if key in doc:
                merged = dict(getattr(mapping, key))
                merged.update(doc[key])
                setattr(mapping, key, merged)
        return mapping

    def for_source(self, source: Source) -> dict:
        return {Source.LOGON: self.logon, Source.DEVICE: self.device, Source.FILE: self.file}[source]


def _split_row(row: str, n_columns: int, content_last: bool) -> list[str]:
    fields = next(csv.reader(io.StringIO(row)))
    if content_last and len(fields) > n_columns:
        # unquoted commas inside a trailing content column
        head = fields[: n_columns - 1]
        head.append(",".join(fields[n_columns - 1:]))
        fields = head
    if len(fields) != n_columns:
        raise MalformedRow(f"expected {n_columns} fields, got {len(fields)}")
    return fields


def _parse_row(row: str, source: Source, spec: dict) -> ActivityEvent:
    columns = spec["columns"]
    content_last = bool(columns) and columns[-1] == "content"
    fields = _split_row(row, len(columns), content_last)
    named = dict(zip(columns, (f.strip() for f in fields)))

    ts = parse_cert_timestamp(named["date"])

    activity_text = named.get("activity", "")
    activity_map = spec.get("activity_map", {})
    if activity_text:
        mapped = activity_map.get(activity_text, activity_text)
        try:
            activity = Activity(mapped)
        except ValueError:
            raise UnknownActivity(f"activity {activity_text!r} not recognized for {source.value}")
    else:
        default = spec.get("default_activity")
        if default is None:
            raise MalformedRow("missing activity column")
        activity = Activity(default)
    if activity not in ACTIVITIES_BY_SOURCE[source]:
        raise UnknownActivity(f"activity {activity.value} invalid for source {source.value}")

    file_id = None
    if source is Source.FILE:
        filename = named.get("filename", "")
        if not filename:
            raise MalformedRow("empty filename")
        file_id = file_id_for(filename)

    app = AppContext.UNKNOWN
    if named.get("app"):
        try:
            app = AppContext(named["app"])
        except ValueError:
            app = AppContext.UNKNOWN

    extra = {k: v for k, v in named.items() if k not in KNOWN_COLUMNS and v != ""}
    if named.get("filename"):
        extra["filename"] = named["filename"]
    if named.get("content"):
        extra["content"] = named["content"]

    return ActivityEvent(
        event_id=named["id"],
        timestamp=ts,
        user_id=named["user"],
        device_id=named["pc"],
        source=source,
        activity=activity,
        app_context=app,
        ip_address=named.get("ip") or None,
        geo_region=named.get("region") or None,
        file_id=file_id,
        raw_extra=extra,
    )


def parse_logon_row(row: str, mapping: ColumnMapping | None = None) -> ActivityEvent:
    spec = (mapping or ColumnMapping()).logon
    return _parse_row(row, Source.LOGON, spec)


def parse_device_row(row: str, mapping: ColumnMapping | None = None) -> ActivityEvent:
    spec = (mapping or ColumnMapping()).device
    return _parse_row(row, Source.DEVICE, spec)


def parse_file_row(row: str, mapping: ColumnMapping | None = None) -> ActivityEvent:
    spec = (mapping or ColumnMapping()).file
    return _parse_row(row, Source.FILE, spec)


PARSERS = {
    Source.LOGON: parse_logon_row,
    Source.DEVICE: parse_device_row,
    Source.FILE: parse_file_row,
}


def iter_csv_rows(path: str | Path, skip_header: bool = True) -> Iterator[str]:
    """Stream raw lines from a CSV file without loading it into memory."""
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        first = True
        for line in fh:
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if first and skip_header:
                first = False
                continue
            first = False
            yield line


# ---------------------------------------------------------------------------
# Directory / registry / IP list enrichment
# ---------------------------------------------------------------------------


class Directory:
    """User index backed by users.csv; unknown users get a synthetic Low record."""

    def __init__(self, users: Iterable[UserRecord] = ()):
        self._users: dict[str, UserRecord] = {u.user_id: u for u in users}

    @classmethod
    def from_csv(cls, path: str | Path) -> "Directory":
        users = []
        for line in iter_csv_rows(path):
            fields = next(csv.reader(io.StringIO(line)))
            if len(fields) < 1:
                continue
            fields += [""] * (5 - len(fields))
            user_id, display, role, priv, dept = (f.strip() for f in fields[:5])
            try:
                privilege = Privilege(priv) if priv else Privilege.LOW
            except ValueError:
                privilege = Privilege.LOW
            users.append(UserRecord(user_id, display, role, privilege, dept))
        return cls(users)

    def get(self, user_id: str) -> UserRecord | None:
        return self._users.get(user_id)

    def get_or_synthesize(self, user_id: str) -> UserRecord:
        user = self._users.get(user_id)
        if user is None:
            user = UserRecord(user_id=user_id, privilege=Privilege.LOW)
            self._users[user_id] = user
        return user

    def __len__(self) -> int:
        return len(self._users)

    def users(self) -> list[UserRecord]:
        return list(self._users.values())


class DeviceRegistry:
    """device_id -> {managed, compliant, os_version}; absent devices are Unmanaged."""

    def __init__(self, entries: dict[str, dict] | None = None):
        self.entries = entries or {}

    @classmethod
    def from_json(cls, path: str | Path) -> "DeviceRegistry":
        return cls(json.loads(Path(path).read_text()))

    def trust_for(self, device_id: str) -> DeviceTrust:
        entry = self.entries.get(device_id)
        if entry is None:
            return DeviceTrust.UNMANAGED
        managed = bool(entry.get("managed", False))
        compliant = bool(entry.get("compliant", False))
        if managed and compliant:
            return DeviceTrust.MANAGED_COMPLIANT
        if managed:
            return DeviceTrust.MANAGED_NONCOMPLIANT
        return DeviceTrust.UNMANAGED

    def noncompliant_flag(self, device_id: str) -> bool:
        # Explicit registry knowledge that an unmanaged device is also
        # non-compliant; stacks an extra adverse point in scoring.
        entry = self.entries.get(device_id)
        if entry is None:
            return False
        return not entry.get("managed", False) and entry.get("compliant") is False

    def os_version(self, device_id: str) -> str | None:
        entry = self.entries.get(device_id)
        return entry.get("os_version") if entry else None


def _parse_networks(lines: Iterable[str]):
    import ipaddress

    nets = []
    for raw in lines:
        raw = raw.strip()
        if not raw or raw.startswith("#"):
            continue
        try:
            if "/" in raw:
                nets.append(ipaddress.ip_network(raw, strict=False))
            else:
                nets.append(ipaddress.ip_network(raw + "/32"))
        except ValueError:
            continue
    return nets


class IpLists:
    """Static trusted / blacklisted address lists (one CIDR or address per line)."""

    def __init__(self, trusted: Iterable[str] = (), blacklist: Iterable[str] = ()):
        self._trusted = _parse_networks(trusted)
        self._blacklist = _parse_networks(blacklist)

    @classmethod
    def from_files(cls, trusted_path: str | Path | None, blacklist_path: str | Path | None) -> "IpLists":
        trusted = Path(trusted_path).read_text().splitlines() if trusted_path else []
        black = Path(blacklist_path).read_text().splitlines() if blacklist_path else []
        return cls(trusted, black)

    def classify(self, ip: str | None) -> str | None:
        if not ip:
            return None
        import ipaddress

        try:
            addr = ipaddress.ip_address(ip)
        except ValueError:
            return "unknown"
        if any(addr in net for net in self._blacklist):
            return "blacklisted"
        if any(addr in net for net in self._trusted):
            return "trusted"
        return "unknown"


# Region centroids for great-circle distance between login locations.
REGION_CENTROIDS: dict[str, tuple[float, float]] = {
    "US-CA": (36.78, -119.42),
    "US-NY": (42.65, -74.95),
    "US-TX": (31.00, -99.00),
    "US-WA": (47.40, -121.49),
    "GB": (54.00, -2.00),
    "DE": (51.00, 9.00),
    "FR": (46.60, 1.88),
    "IN": (21.00, 78.00),
    "CN": (35.00, 103.00),
    "JP": (36.00, 138.00),
    "BR": (-10.00, -55.00),
    "AU": (-25.00, 135.00),
    "RU": (60.00, 100.00),
    "SG": (1.35, 103.82),
    "ZA": (-29.00, 24.00),
}


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * 6371.0 * math.asin(math.sqrt(h))


def region_distance_km(region_a: str | None, region_b: str | None) -> float | None:
    if not region_a or not region_b:
        return None
    ca = REGION_CENTROIDS.get(region_a)
    cb = REGION_CENTROIDS.get(region_b)
    if ca is None or cb is None:
        return None
    return haversine_km(ca, cb)


class GeoTable:
    """Static IP->region mapping (list of {cidr, region} entries)."""

    def __init__(self, entries: Iterable[dict] = ()):
        import ipaddress

        self._entries = []
        for e in entries:
            try:
                net = ipaddress.ip_network(e["cidr"], strict=False)
            except (KeyError, ValueError):
                continue
            self._entries.append((net, e.get("region", "")))

    @classmethod
    def from_json(cls, path: str | Path) -> "GeoTable":
        return cls(json.loads(Path(path).read_text()))

    def region_for(self, ip: str | None) -> str | None:
        if not ip:
            return None
        import ipaddress

        try:
            addr = ipaddress.ip_address(ip)
        except ValueError:
            return None
        for net, region in self._entries:
            if addr in net:
                return region
        return None


def enrich(
    event: ActivityEvent,
    directory: Directory,
    device_registry: DeviceRegistry | None = None,
    ip_lists: IpLists | None = None,
    geo_table: GeoTable | None = None,
) -> ActivityEvent:
    """Resolve trust/geo/user context; best-effort, unresolved fields stay Unknown.

    Idempotent: all lookups are deterministic against the given indices.
    """
    directory.get_or_synthesize(event.user_id)

    extra = dict(event.raw_extra)
    trust = event.device_trust
    if device_registry is not None:
        trust = device_registry.trust_for(event.device_id)
        if device_registry.noncompliant_flag(event.device_id):
            extra["device_noncompliant"] = "true"
        else:
            extra.pop("device_noncompliant", None)

    geo = event.geo_region
    if geo is None and geo_table is not None:
        geo = geo_table.region_for(event.ip_address)

    if ip_lists is not None and event.ip_address:
        extra["ip_class"] = ip_lists.classify(event.ip_address) or "unknown"

    return replace(event, device_trust=trust, geo_region=geo, raw_extra=extra)


# ---------------------------------------------------------------------------
# Sessionization
# ---------------------------------------------------------------------------

DEFAULT_IDLE_GAP = timedelta(minutes=30)


def _session_id(user_id: str, start: datetime, first_event_id: str) -> str:
    key = f"{user_id}|{start.isoformat()}|{first_event_id}"
    return "S-" + hashlib.sha1(key.encode("utf-8")).hexdigest()[:12]


def _close(events: list[ActivityEvent]) -> Session:
    return Session(
        session_id=_session_id(events[0].user_id, events[0].timestamp, events[0].event_id),
        user_id=events[0].user_id,
        device_id=events[0].device_id,
        start=events[0].timestamp,
        end=events[-1].timestamp,
        events=list(events),
    )


def sessionize(
    events: Iterable[ActivityEvent],
    idle_gap: timedelta = DEFAULT_IDLE_GAP,
) -> list[Session]:
    """Group one user's time-ordered events into sessions.

    A Login opens a session; Logout or an idle gap closes it. Events with no
    open session (and not a Login) become singleton sessions. The input is
    partitioned: every event lands in exactly one session, order preserved.
    """
    sessions: list[Session] = []
    open_events: list[ActivityEvent] = []

    for event in events:
        if open_events and event.timestamp - open_events[-1].timestamp > idle_gap:
            sessions.append(_close(open_events))
            open_events = []
        if event.activity is Activity.LOGIN:
            if open_events:
                sessions.append(_close(open_events))
            open_events = [event]
        elif open_events:
            open_events.append(event)
            if event.activity is Activity.LOGOUT:
                sessions.append(_close(open_events))
                open_events = []
        else:
            sessions.append(_close([event]))

    if open_events:
        sessions.append(_close(open_events))
    return sessions


def sessionize_all(
    events: Iterable[ActivityEvent],
    idle_gap: timedelta = DEFAULT_IDLE_GAP,
) -> list[Session]:
    """Partition a mixed-user stream by user_id, order each partition, sessionize."""
    by_user: dict[str, list[ActivityEvent]] = {}
    for event in events:
        by_user.setdefault(event.user_id, []).append(event)
    sessions: list[Session] = []
    for user_id in sorted(by_user):
        ordered = sorted(by_user[user_id], key=lambda e: e.timestamp)
        sessions.extend(sessionize(ordered, idle_gap))
    return sessions


class Sessionizer:
    """Incremental per-user sessionizer for streaming ingest.

    Feed time-ordered events (per user); closed sessions are returned as they
    complete. ``flush`` closes everything still open (end of stream).
    """

    def __init__(self, idle_gap: timedelta = DEFAULT_IDLE_GAP):
        self.idle_gap = idle_gap
        self._open: dict[str, list[ActivityEvent]] = {}
        self.latest_ts: Optional[datetime] = None

    def feed(self, event: ActivityEvent) -> list[Session]:
        closed: list[Session] = []
        if self.latest_ts is None or event.timestamp > self.latest_ts:
            self.latest_ts = event.timestamp
        open_events = self._open.get(event.user_id, [])

        if open_events and event.timestamp - open_events[-1].timestamp > self.idle_gap:
            closed.append(_close(open_events))
            open_events = []
        if event.activity is Activity.LOGIN:
            if open_events:
                closed.append(_close(open_events))
            open_events = [event]
        elif open_events:
            open_events.append(event)
            if event.activity is Activity.LOGOUT:
                closed.append(_close(open_events))
                open_events = []
        else:
            closed.append(_close([event]))

        if open_events:
            self._open[event.user_id] = open_events
        else:
            self._open.pop(event.user_id, None)
        return closed

    def flush(self) -> list[Session]:
        closed = [_close(evts) for _, evts in sorted(self._open.items())]
        self._open.clear()
        return closed

    def flush_idle(self, now: Optional[datetime] = None) -> list[Session]:
        """Close sessions idle for longer than the gap, in event time."""
        now = now or self.latest_ts
        if now is None:
            return []
        closed = []
        for user_id in sorted(self._open):
            events = self._open[user_id]
            if now - events[-1].timestamp > self.idle_gap:
                closed.append(_close(events))
                del self._open[user_id]
        return closed

    @property
    def open_count(self) -> int:
        return len(self._open)
