"""Generate the committed test fixtures.

fixtures/cert-mini : golden end-to-end ingest fixture. Benign background
  traffic plus five scripted incidents (a moderate-risk off-hours file-move
  session, a failed-login burst, impossible-travel logins, a mass deletion,
  and a sensitive external share).
fixtures/eval-200  : 200 labeled sessions (150 plain benign, 25 flagged-benign
  false-positive bait, 25 malicious) for the feedback-loop experiment.

Regenerates golden.txt and labels.csv by running the real pipeline once.
Deterministic: fixed seed, fixed timestamps.
"""

from __future__ import annotations

import csv
import json
import random
import shutil
import sys
import tempfile
from datetime import datetime, timedelta
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from irm.service import IrmService, ServiceConfig, ingest_directory  # noqa: E402

MAPPING = {
    "logon": {"columns": ["id", "date", "user", "pc", "activity", "ip", "region"]},
    "device": {"columns": ["id", "date", "user", "pc", "activity"]},
    "file": {
        "columns": ["id", "date", "user", "pc", "filename", "activity", "app", "ip", "recipient", "content"],
        "activity_map": {
            "Write": "FileWrite", "Read": "FileRead", "Create": "FileCreate",
            "Move": "FileMove", "Rename": "FileRename", "Delete": "FileDelete",
            "ShareExternal": "FileShareExternal", "ShareInternal": "FileShareInternal",
            "AttachShare": "AttachmentShare", "AttachEdit": "AttachmentEdit",
            "Upload": "FileUpload",
        },
    },
}

GEO = [
    {"cidr": "10.0.0.0/8", "region": "US-CA"},
    {"cidr": "198.51.100.0/24", "region": "GB"},
    {"cidr": "203.0.113.0/24", "region": "CN"},
]

CERT_TS = "%m/%d/%Y %H:%M:%S"


class RowSink:
    def __init__(self):
        self.logon: list[list[str]] = []
        self.device: list[list[str]] = []
        self.file: list[list[str]] = []
        self._n = 0

    def _next_id(self) -> str:
        self._n += 1
        return f"{{{self._n:06d}}}"

    def add_logon(self, ts, user, pc, activity, ip="", region=""):
        self.logon.append([self._next_id(), ts.strftime(CERT_TS), user, pc, activity, ip, region])

    def add_device(self, ts, user, pc, activity):
        self.device.append([self._next_id(), ts.strftime(CERT_TS), user, pc, activity])

    def add_file(self, ts, user, pc, filename, activity, app="", ip="", recipient="", content=""):
        self.file.append(
            [self._next_id(), ts.strftime(CERT_TS), user, pc, filename, activity, app, ip, recipient, content]
        )

    def write(self, out_dir: Path):
        headers = {
            "logon": MAPPING["logon"]["columns"],
            "device": MAPPING["device"]["columns"],
            "file": MAPPING["file"]["columns"],
        }
        for name in ("logon", "device", "file"):
            rows = getattr(self, name)
            rows.sort(key=lambda r: (datetime.strptime(r[1], CERT_TS), r[0]))
            with open(out_dir / f"{name}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(headers[name])
                writer.writerows(rows)


def write_common(out_dir: Path, users: list[list[str]], registry: dict, token: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "users.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "display_name", "role", "privilege", "department"])
        writer.writerows(users)
    (out_dir / "registry.json").write_text(json.dumps(registry, indent=2))
    (out_dir / "ip_trusted.txt").write_text("10.0.0.0/8\n")
    (out_dir / "ip_blacklist.txt").write_text("203.0.113.0/24\n")
    (out_dir / "geo.json").write_text(json.dumps(GEO, indent=2))
    (out_dir / "mapping.json").write_text(json.dumps(MAPPING, indent=2))
    (out_dir / "config.json").write_text(
        json.dumps(
            {
                "auth_token": token,
                "users_path": "users.csv",
                "registry_path": "registry.json",
                "trusted_ips_path": "ip_trusted.txt",
                "blacklist_ips_path": "ip_blacklist.txt",
                "geo_path": "geo.json",
                "mapping_path": "mapping.json",
            },
            indent=2,
        )
    )


def benign_day(sink: RowSink, rng: random.Random, user: str, pc: str, day: datetime, n_files: int):
    login = day.replace(hour=9, minute=rng.randint(0, 40), second=rng.randint(0, 59))
    sink.add_logon(login, user, pc, "Logon", ip=f"10.0.{rng.randint(1, 20)}.{rng.randint(2, 250)}")
    ts = login
    for i in range(n_files):
        ts = ts + timedelta(minutes=rng.randint(5, 25))
        sink.add_file(
            ts, user, pc, f"report-{user}-{day.day}-{i}.docx", "Write",
            app="LocalFS", ip=f"10.0.{rng.randint(1, 20)}.{rng.randint(2, 250)}",
            content="quarterly status notes",
        )
    logout = ts + timedelta(minutes=rng.randint(10, 25))
    sink.add_logon(logout, user, pc, "Logoff", ip=f"10.0.{rng.randint(1, 20)}.{rng.randint(2, 250)}")


def make_cert_mini(out_dir: Path):
    rng = random.Random(42)
    sink = RowSink()
    users = []
    registry = {}

    day0 = datetime(2010, 1, 4)
    for u in range(1, 26):
        user = f"U{u:03d}"
        pc = f"PC-{u:03d}"
        users.append([user, f"User {u}", "analyst", "Low", "eng" if u % 2 else "sales"])
        registry[pc] = {"managed": True, "compliant": True, "os_version": "windows:10.0.19042"}
        for d in range(5):
            benign_day(sink, rng, user, pc, day0 + timedelta(days=d), rng.randint(2, 6))

    # a couple of in-session removable-media events for realism
    sink.add_device(day0.replace(hour=9, minute=50), "U001", "PC-001", "Connect")
    sink.add_device(day0.replace(hour=10, minute=20), "U001", "PC-001", "Disconnect")

    # moderate-risk session: low-privilege user, five file moves on SharePoint,
    # unknown IP, outside business hours, managed-but-noncompliant device
    users.append(["EMP-LOW", "Worked Example", "contractor", "Low", "eng"])
    registry["PC-BYOD"] = {"managed": True, "compliant": False, "os_version": "windows:10.0.19042"}
    we_day = day0 + timedelta(days=2)
    sink.add_logon(we_day.replace(hour=22, minute=0), "EMP-LOW", "PC-BYOD", "Logon", ip="8.8.8.8")
    for i in range(5):
        sink.add_file(
            we_day.replace(hour=22, minute=1 + i), "EMP-LOW", "PC-BYOD",
            f"project-plan-{i}.docx", "Move", app="SharePoint", ip="8.8.8.8",
            content="migration batch",
        )
    sink.add_logon(we_day.replace(hour=22, minute=10), "EMP-LOW", "PC-BYOD", "Logoff", ip="8.8.8.8")

    # failed-login burst
    users.append(["EMP-BRUTE", "Brute Force", "analyst", "Low", "eng"])
    registry["PC-777"] = {"managed": True, "compliant": True, "os_version": "windows:10.0.19042"}
    for i in range(6):
        sink.add_logon(
            (day0 + timedelta(days=1)).replace(hour=11) + timedelta(seconds=i * 20),
            "EMP-BRUTE", "PC-777", "LogonFailed", ip="10.0.9.9",
        )

    # impossible travel
    users.append(["EMP-TRAVEL", "Fast Traveler", "analyst", "Low", "sales"])
    registry["PC-888"] = {"managed": True, "compliant": True, "os_version": "windows:10.0.19042"}
    t_day = day0 + timedelta(days=3)
    sink.add_logon(t_day.replace(hour=10, minute=0), "EMP-TRAVEL", "PC-888", "Logon", ip="10.0.3.3", region="US-CA")
    sink.add_logon(t_day.replace(hour=10, minute=5), "EMP-TRAVEL", "PC-888", "Logoff", ip="10.0.3.3", region="US-CA")
    sink.add_logon(t_day.replace(hour=10, minute=35), "EMP-TRAVEL", "PC-888", "Logon", ip="198.51.100.9", region="GB")
    sink.add_logon(t_day.replace(hour=10, minute=40), "EMP-TRAVEL", "PC-888", "Logoff", ip="198.51.100.9", region="GB")

    # mass deletion
    users.append(["EMP-PURGE", "Bulk Deleter", "analyst", "Low", "eng"])
    registry["PC-999"] = {"managed": True, "compliant": True, "os_version": "windows:10.0.19042"}
    p_day = day0 + timedelta(days=4)
    sink.add_logon(p_day.replace(hour=10, minute=0), "EMP-PURGE", "PC-999", "Logon", ip="10.0.4.4")
    for i in range(50):
        sink.add_file(
            p_day.replace(hour=10, minute=1 + i // 3, second=(i * 7) % 60), "EMP-PURGE", "PC-999",
            f"archive-{i}.dat", "Delete", app="LocalFS", ip="10.0.4.4",
        )
    sink.add_logon(p_day.replace(hour=10, minute=30), "EMP-PURGE", "PC-999", "Logoff", ip="10.0.4.4")

    # sensitive external share
    users.append(["EMP-LEAK", "Doc Sharer", "analyst", "Low", "sales"])
    registry["PC-555"] = {"managed": True, "compliant": True, "os_version": "windows:10.0.19042"}
    l_day = day0 + timedelta(days=4)
    sink.add_logon(l_day.replace(hour=14, minute=0), "EMP-LEAK", "PC-555", "Logon", ip="10.0.5.5")
    sink.add_file(
        l_day.replace(hour=14, minute=5), "EMP-LEAK", "PC-555",
        "patients_2024.xlsx", "ShareExternal", app="SharePoint", ip="10.0.5.5",
        recipient="bob@evil.example", content="patient MRN: 12345678 admitted",
    )
    sink.add_logon(l_day.replace(hour=14, minute=10), "EMP-LEAK", "PC-555", "Logoff", ip="10.0.5.5")

    write_common(out_dir, users, registry, token="fixture-token")
    sink.write(out_dir)


def make_eval_200(out_dir: Path):
    """200 sessions over two review waves (days 0-2 and days 3-4).

    140 plain benign; 20 off-hours migrators (wave 1 false positives);
    20 unmanaged-device renamers (a second, distinct FP pattern in wave 2);
    20 malicious exfil sessions split across waves.
    """
    rng = random.Random(77)
    sink = RowSink()
    users = []
    registry = {}
    truth: dict[str, str] = {}  # user -> label; sessions inherit the user's label

    day0 = datetime(2012, 3, 5)
    for u in range(1, 29):
        user = f"BEN{u:03d}"
        pc = f"PC-B{u:03d}"
        users.append([user, f"Benign {u}", "analyst", "Low", "eng"])
        registry[pc] = {"managed": True, "compliant": True}
        truth[user] = "Benign"
        for d in range(5):
            benign_day(sink, rng, user, pc, day0 + timedelta(days=d), rng.randint(1, 6))

    # wave-1 false positives: low rule-relevant activity by day, but the
    # session shape (off-hours SharePoint moves, unknown IP, non-compliant
    # managed device) rule-scores above the alert threshold
    for u in range(1, 21):
        user = f"FLG{u:03d}"
        pc = f"PC-F{u:03d}"
        users.append([user, f"Night Migrator {u}", "contractor", "Low", "eng"])
        registry[pc] = {"managed": True, "compliant": False}
        truth[user] = "Benign"
        day = day0 + timedelta(days=(u - 1) % 3)  # days 0-2
        login = day.replace(hour=21, minute=rng.randint(0, 30))
        sink.add_logon(login, user, pc, "Logon", ip="8.8.8.8")
        ts = login
        for i in range(5):
            ts = ts + timedelta(minutes=rng.randint(1, 4))
            sink.add_file(
                ts, user, pc, f"migrate-{user}-{i}.docx", "Move",
                app="SharePoint", ip="8.8.8.8", content="batch move",
            )
        sink.add_logon(ts + timedelta(minutes=3), user, pc, "Logoff", ip="8.8.8.8")

    # wave-2 false positives: a different benign-but-alerting pattern
    # (daytime renames from an unmanaged device over a blacklisted egress IP)
    for u in range(1, 21):
        user = f"REN{u:03d}"
        pc = f"PC-R{u:03d}"
        users.append([user, f"Branch Renamer {u}", "contractor", "Low", "eng"])
        registry[pc] = {"managed": False, "compliant": False}
        truth[user] = "Benign"
        day = day0 + timedelta(days=3 + (u - 1) % 2)  # days 3-4
        login = day.replace(hour=11, minute=rng.randint(0, 30))
        sink.add_logon(login, user, pc, "Logon", ip="203.0.113.50")
        ts = login
        for i in range(5):
            ts = ts + timedelta(minutes=rng.randint(1, 4))
            sink.add_file(
                ts, user, pc, f"branch-{user}-{i}.docx", "Rename",
                app="GoogleDrive", ip="203.0.113.50", content="refactor rename",
            )
        sink.add_logon(ts + timedelta(minutes=3), user, pc, "Logoff", ip="203.0.113.50")

    for u in range(1, 21):
        user = f"MAL{u:03d}"
        pc = f"PC-M{u:03d}"
        users.append([user, f"Insider {u}", "contractor", "Low", "eng"])
        # deliberately unregistered devices: they resolve Unmanaged
        truth[user] = "Malicious"
        day = day0 + timedelta(days=(u - 1) % 5)
        login = day.replace(hour=23, minute=rng.randint(0, 20))
        sink.add_logon(login, user, pc, "Logon", ip="8.8.8.8")
        ts = login
        for i in range(12):
            ts = ts + timedelta(minutes=rng.randint(1, 3))
            sink.add_file(
                ts, user, pc, f"payroll-dump-{user}-{i}.xlsx", "Delete",
                app="SharePoint", ip="8.8.8.8", content="SSN: 123-45-6789 records",
            )
        for i in range(2):
            ts = ts + timedelta(minutes=2)
            sink.add_file(
                ts, user, pc, f"payroll-dump-{user}-x{i}.xlsx", "ShareExternal",
                app="SharePoint", ip="8.8.8.8", recipient="drop@exfil.example",
                content="SSN: 987-65-4321 full export",
            )
        sink.add_logon(ts + timedelta(minutes=2), user, pc, "Logoff", ip="8.8.8.8")

    write_common(out_dir, users, registry, token="fixture-token")
    sink.write(out_dir)
    return truth, day0


def run_golden(fixture_dir: Path) -> str:
    with tempfile.TemporaryDirectory() as tmp:
        cfg = ServiceConfig.from_json(fixture_dir / "config.json")
        cfg.data_dir = tmp
        service = IrmService(cfg)
        report = ingest_directory(service, fixture_dir)
        service.close()
        return (
            f"events={report.events_stored} duplicates={report.duplicates} "
            f"errors={len(report.parse_errors)} sessions={report.sessions_scored} "
            f"violations={report.violations} alerts={report.alerts}"
        )


def write_labels(fixture_dir: Path, truth: dict[str, str], day0: datetime) -> int:
    # note column carries the review wave: sessions starting on days 0-2 are
    # wave 1, days 3-4 wave 2
    with tempfile.TemporaryDirectory() as tmp:
        cfg = ServiceConfig.from_json(fixture_dir / "config.json")
        cfg.data_dir = tmp
        service = IrmService(cfg)
        ingest_directory(service, fixture_dir)
        sessions = service.store.sessions()
        rows = [
            (
                s.session_id,
                truth[s.user_id],
                "wave=1" if (s.start.replace(tzinfo=None) - day0).days <= 2 else "wave=2",
            )
            for s in sorted(sessions, key=lambda s: (s.user_id, s.start.isoformat()))
        ]
        service.close()
    with open(fixture_dir / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session_id", "label", "note"])
        writer.writerows(rows)
    return len(rows)


def main():
    fixtures = REPO / "fixtures"
    cert_mini = fixtures / "cert-mini"
    eval_200 = fixtures / "eval-200"
    for d in (cert_mini, eval_200):
        if d.exists():
            shutil.rmtree(d)

    make_cert_mini(cert_mini)
    golden = run_golden(cert_mini)
    (cert_mini / "golden.txt").write_text(golden + "\n")
    print(f"cert-mini: {golden}")

    truth, day0 = make_eval_200(eval_200)
    n = write_labels(eval_200, truth, day0)
    print(f"eval-200: {n} labeled sessions")


if __name__ == "__main__":
    main()
