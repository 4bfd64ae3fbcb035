from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

# populated by test_acceptance; printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from irm.events import (
    Activity,
    ActivityEvent,
    AppContext,
    DeviceTrust,
    Privilege,
    Session,
    Source,
    UserRecord,
)

BASE_TS = datetime(2010, 1, 4, 10, 0, 0, tzinfo=timezone.utc)


def make_event(
    event_id: str = "{E1}",
    ts: datetime | None = None,
    user_id: str = "U1",
    device_id: str = "PC-1",
    source: Source = Source.FILE,
    activity: Activity = Activity.FILE_WRITE,
    app: AppContext = AppContext.UNKNOWN,
    ip: str | None = None,
    region: str | None = None,
    trust: DeviceTrust = DeviceTrust.MANAGED_COMPLIANT,
    file_id: str | None = None,
    **extra: str,
) -> ActivityEvent:
    return ActivityEvent(
        event_id=event_id,
        timestamp=ts or BASE_TS,
        user_id=user_id,
        device_id=device_id,
        source=source,
        activity=activity,
        app_context=app,
        ip_address=ip,
        geo_region=region,
        device_trust=trust,
        file_id=file_id,
        raw_extra=dict(extra),
    )


def make_session(events: list[ActivityEvent], session_id: str = "S-test") -> Session:
    return Session(
        session_id=session_id,
        user_id=events[0].user_id if events else "U1",
        device_id=events[0].device_id if events else "PC-1",
        start=events[0].timestamp if events else BASE_TS,
        end=events[-1].timestamp if events else BASE_TS,
        events=events,
    )


@pytest.fixture
def low_user() -> UserRecord:
    return UserRecord(user_id="U1", privilege=Privilege.LOW)


@pytest.fixture
def high_user() -> UserRecord:
    return UserRecord(user_id="U2", privilege=Privilege.HIGH)
