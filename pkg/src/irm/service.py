"""Pipeline orchestration: parse -> enrich -> classify -> store -> sessionize
-> rule scoring -> AI scoring -> policies -> alerts -> recommendations."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import airs, recommend
from .airs import (
    AutoencoderModel,
    BaselineReservoir,
    FeatureVector,
    TrainHyper,
    featurize,
    make_feedback_record,
)
from .errors import AlertNotFound, IrmError, OutOfRange
from .events import (
    ActivityEvent,
    ColumnMapping,
    DeviceRegistry,
    Directory,
    GeoTable,
    IpLists,
    PARSERS,
    Sessionizer,
    Session,
    Source,
    enrich,
    iter_csv_rows,
)
from .policies import (
    AuxConfig,
    PolicyContext,
    PolicyEngine,
    default_policies,
    load_policies,
)
from .prism import Band, PrismConfig, score_session
from .sensitivity import FileMeta, SensitivityConfig, classify_file
from .store import Alert, AlertOrigin, AlertStatus, FernetCodec, RiskStore


@dataclass
class ServiceConfig:
    data_dir: str = "./irm-data"
    host: str = "127.0.0.1"
    port: int = 8400
    auth_token: str = "dev-token"
    alpha: float = 0.5
    n_threshold: int = 50
    cumulative_alert_threshold: float = 5.0
    ingest_batch_size: int = 1000
    idle_gap_s: int = 1800
    seed: int = 1234
    auto_train_min_baseline: int = 100
    prism: PrismConfig = field(default_factory=PrismConfig)
    policy_path: Optional[str] = None
    aux_path: Optional[str] = None
    sensitivity_path: Optional[str] = None
    mapping_path: Optional[str] = None
    registry_path: Optional[str] = None
    trusted_ips_path: Optional[str] = None
    blacklist_ips_path: Optional[str] = None
    geo_path: Optional[str] = None
    users_path: Optional[str] = None
    template_path: Optional[str] = None
    encryption_key: Optional[str] = None  # enables at-rest encryption of the store

    def __post_init__(self):
        if not (1 <= self.port <= 65535):
            raise ValueError(f"port {self.port} outside [1, 65535]")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha {self.alpha} outside [0, 1]")

    @classmethod
    def from_json(cls, path: str | Path) -> "ServiceConfig":
        base = Path(path).parent
        doc = json.loads(Path(path).read_text())
        kwargs = {}
        for key in (
            "data_dir", "host", "port", "auth_token", "alpha", "n_threshold",
            "cumulative_alert_threshold", "ingest_batch_size", "idle_gap_s", "seed",
            "auto_train_min_baseline", "encryption_key",
        ):
            if key in doc:
                kwargs[key] = doc[key]
        for key in (
            "policy_path", "aux_path", "sensitivity_path", "mapping_path",
            "registry_path", "trusted_ips_path", "blacklist_ips_path", "geo_path",
            "users_path", "template_path",
        ):
            if key in doc and doc[key]:
                resolved = Path(doc[key])
                if not resolved.is_absolute():
                    resolved = base / resolved
                if not resolved.exists():
                    raise FileNotFoundError(f"{key}: {resolved} does not exist")
                kwargs[key] = str(resolved)
        if "prism" in doc:
            kwargs["prism"] = PrismConfig.from_dict(doc["prism"])
        cfg = cls(**kwargs)
        cfg.apply_env_overrides()
        return cfg

    def apply_env_overrides(self) -> None:
        self.data_dir = os.environ.get("IRM_DATA_DIR", self.data_dir)
        self.auth_token = os.environ.get("IRM_TOKEN", self.auth_token)
        port = os.environ.get("IRM_PORT")
        if port:
            self.port = int(port)


@dataclass
class PipelineReport:
    events_stored: int = 0
    duplicates: int = 0
    parse_errors: list[dict] = field(default_factory=list)
    sessions_scored: int = 0
    violations: int = 0
    alerts: int = 0

    def to_dict(self) -> dict:
        return {
            "events_stored": self.events_stored,
            "duplicates": self.duplicates,
            "errors": len(self.parse_errors),
            "error_detail": self.parse_errors[:50],
            "sessions_scored": self.sessions_scored,
            "violations": self.violations,
            "alerts": self.alerts,
        }


_SEVERITY_BY_BAND = {Band.LOW: "LowSev", Band.MODERATE: "Medium", Band.HIGH: "High"}


class IrmService:
    """Owns the store, configs, model registry, and the ingest pipeline."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        codec = FernetCodec(config.encryption_key) if config.encryption_key else None
        self.store = RiskStore(config.data_dir, codec=codec)
        self.prism_cfg = config.prism
        self.sensitivity_cfg = (
            SensitivityConfig.from_json(config.sensitivity_path)
            if config.sensitivity_path
            else SensitivityConfig()
        )
        self.mapping = (
            ColumnMapping.from_json(config.mapping_path) if config.mapping_path else ColumnMapping()
        )
        self.directory = (
            Directory.from_csv(config.users_path) if config.users_path else Directory()
        )
        self.registry = (
            DeviceRegistry.from_json(config.registry_path) if config.registry_path else DeviceRegistry()
        )
        self.ip_lists = IpLists.from_files(config.trusted_ips_path, config.blacklist_ips_path)
        self.geo_table = GeoTable.from_json(config.geo_path) if config.geo_path else GeoTable()
        policies = (
            load_policies(config.policy_path) if config.policy_path else default_policies()
        )
        aux = AuxConfig.from_json(config.aux_path) if config.aux_path else AuxConfig()
        self.engine = PolicyEngine(policies, aux=aux, device_registry=self.registry)
        self.sessionizer = Sessionizer(idle_gap=timedelta(seconds=config.idle_gap_s))
        self.template_generator = (
            recommend.TemplateGenerator.from_json(config.template_path)
            if config.template_path
            else recommend.TemplateGenerator()
        )

        self.hyper = TrainHyper(seed=config.seed)
        self.reservoir = BaselineReservoir(capacity=500, seed=config.seed)
        self._model_lock = threading.Lock()
        self._model: Optional[AutoencoderModel] = None
        self._load_model()

        self.file_meta: dict[str, FileMeta] = {}
        self.sensitive_files: set[str] = set()
        self.latest_vector: dict[str, FeatureVector] = {}
        self._feedback_seq = len(self.store.feedback_records())
        self._restore_runtime_state()

    # -- model registry (atomic snapshot swap) --------------------------------

    @property
    def model(self) -> Optional[AutoencoderModel]:
        return self._model

    def _model_path(self) -> Path:
        return Path(self.config.data_dir) / "model.json"

    def _load_model(self) -> None:
        path = self._model_path()
        if path.exists():
            self._model = airs.load_model(path)

    def _publish_model(self, model: AutoencoderModel) -> None:
        with self._model_lock:
            airs.save_model(model, self._model_path())
            self._model = model

    def _restore_runtime_state(self) -> None:
        for doc in self.store.scores():
            if doc.get("features"):
                self.latest_vector[doc["user_id"]] = FeatureVector.from_list(doc["features"])

    # -- ingest ----------------------------------------------------------------

    def parse_row(self, source: str | Source, row: str) -> ActivityEvent:
        source = Source(source)
        return PARSERS[source](row, self.mapping)

    def run_pipeline(self, rows: Sequence[dict]) -> PipelineReport:
        """Process a batch of raw rows ({source, row}); per-row failures isolated."""
        report = PipelineReport()
        events: list[ActivityEvent] = []
        for i, item in enumerate(rows):
            try:
                event = self.parse_row(item["source"], item["row"])
                events.append(event)
            except (IrmError, KeyError, ValueError) as exc:
                report.parse_errors.append(
                    {"row": i, "code": getattr(exc, "code", "bad_row"), "message": str(exc)}
                )
        events.sort(key=lambda e: (e.timestamp, e.event_id))
        self._process_events(events, report)
        return report

    def _process_events(self, events: list[ActivityEvent], report: PipelineReport) -> None:
        new_events: list[ActivityEvent] = []
        batch_ids: set[str] = set()
        for event in events:
            if self.store.has_event(event.event_id) or event.event_id in batch_ids:
                report.duplicates += 1
                continue
            batch_ids.add(event.event_id)
            event = enrich(event, self.directory, self.registry, self.ip_lists, self.geo_table)
            if event.source is Source.FILE and event.file_id:
                self._classify_event_file(event)
            new_events.append(event)

        result = self.store.append_events(new_events)
        report.events_stored += result["accepted"]
        report.duplicates += result["duplicates"]

        for event in new_events:
            user = self.directory.get_or_synthesize(event.user_id)
            ctx = PolicyContext(
                user=user,
                sensitive_files=self.sensitive_files,
                file_paths={fid: meta.path for fid, meta in self.file_meta.items()},
            )
            for violation in self.engine.evaluate(event, ctx):
                self._record_violation(violation, report)
            for session in self.sessionizer.feed(event):
                self._score_session(session, report)

    def _classify_event_file(self, event: ActivityEvent) -> None:
        filename = event.raw_extra.get("filename", "")
        meta = self.file_meta.get(event.file_id)
        if meta is None:
            path = event.raw_extra.get("path", "")
            meta = FileMeta(file_id=event.file_id, name=filename, path=path)
        content = event.raw_extra.get("content")
        classify_file(meta, content, self.sensitivity_cfg, now=event.timestamp)
        self.file_meta[event.file_id] = meta
        if meta.labels:
            self.sensitive_files.add(event.file_id)

    def flush_sessions(self) -> PipelineReport:
        """Close every open session (end of stream) and score it."""
        report = PipelineReport()
        for session in self.sessionizer.flush():
            self._score_session(session, report)
        self._maybe_auto_train()
        return report

    def flush_idle_sessions(self) -> PipelineReport:
        """Close and score sessions past the idle gap, by event time."""
        report = PipelineReport()
        for session in self.sessionizer.flush_idle():
            self._score_session(session, report)
        self._maybe_auto_train()
        return report

    def _maybe_auto_train(self) -> None:
        if self._model is None and len(self.reservoir) >= self.config.auto_train_min_baseline:
            model = airs.train_initial(self.reservoir.vectors(), self.hyper)
            self._publish_model(model)

    # -- scoring -----------------------------------------------------------------

    def _recent_activity(self, session: Session) -> list[datetime]:
        window_start = session.end - self.prism_cfg.cumulative.window
        events = self.store.query_events(session.user_id, window_start, session.end)
        return [e.timestamp for e in events]

    def _score_session(self, session: Session, report: PipelineReport) -> None:
        user = self.directory.get_or_synthesize(session.user_id)
        prism_score = score_session(
            session, user, self.prism_cfg,
            recent_activity=self._recent_activity(session),
        )
        vector = featurize(session, user, prism_score.breakdown, self.sensitive_files)
        s_ai = None
        model = self._model
        if model is not None and model.calibration is not None:
            s_ai = airs.score_vector(model, vector)

        self.store.put_session(session)
        self.store.put_score(
            {
                "subject": session.session_id,
                "user_id": session.user_id,
                "prism": prism_score.to_dict(),
                "s_ai": s_ai,
                "features": vector.to_list(),
                "at": session.end.strftime("%Y-%m-%dT%H:%M:%S"),
            }
        )
        self.latest_vector[session.user_id] = vector
        if prism_score.normalized < self.prism_cfg.alert_threshold:
            self.reservoir.add(vector)
        report.sessions_scored += 1

        if prism_score.normalized >= self.prism_cfg.alert_threshold:
            alert = Alert.build(
                created_at=session.end,
                subject=session.user_id,
                origin=AlertOrigin.SCORE_THRESHOLD,
                origin_ref=session.session_id,
                risk_score=prism_score,
                severity=_SEVERITY_BY_BAND[prism_score.band],
                s_ai=s_ai,
                feature_vector=vector.to_list(),
            )
            self._finalize_alert(alert)
            report.alerts += 1

        s_final = s_ai if s_ai is not None else prism_score.normalized
        profile = self.store.get_profile(session.user_id)
        profile, cumulative_alert = airs.update_profile(
            profile, s_final, session.end,
            cumulative_alert_threshold=self.config.cumulative_alert_threshold,
            score_ref=session.session_id,
        )
        self.store.put_profile(profile)
        if cumulative_alert is not None:
            cumulative_alert.feature_vector = vector.to_list()
            cumulative_alert.s_ai = s_ai
            self._finalize_alert(cumulative_alert)
            report.alerts += 1

    def _record_violation(self, violation, report: PipelineReport) -> None:
        policy = self.engine.policy_by_id(violation.policy_id)
        action = self.engine.apply_action(violation, policy)
        doc = violation.to_dict()
        doc["category"] = policy.category.value
        doc["severity"] = policy.severity.value
        self.store.put_violation(doc)
        self.store.put_action({"violation_id": violation.violation_id, **action.to_dict()})
        report.violations += 1

        alert = Alert.build(
            created_at=violation.fired_at,
            subject=violation.subject,
            origin=AlertOrigin.POLICY_VIOLATION,
            origin_ref=violation.violation_id,
            severity=policy.severity.value,
        )
        vector = self.latest_vector.get(violation.subject)
        if vector is not None:
            alert.feature_vector = vector.to_list()
        self._finalize_alert(alert)
        report.alerts += 1

    def _finalize_alert(self, alert: Alert) -> None:
        context = recommend.assemble_context(alert, self.store, self.directory)
        alert.recommendation = recommend.generate(context, template=self.template_generator).summary
        self.store.upsert_alert(alert)

    # -- feedback / retraining -----------------------------------------------------

    def submit_feedback(self, alert_id: str, s_user: float, note: str = "", analyst_id: str = "") -> dict:
        alert = self.store.get_alert(alert_id)
        if alert is None:
            raise AlertNotFound(alert_id)
        if not (0.0 <= s_user <= 1.0):
            raise OutOfRange(f"s_user={s_user} outside [0,1]")

        s_ai = alert.score_value
        if alert.feature_vector is not None:
            vector = FeatureVector.from_list(alert.feature_vector)
        else:
            vector = self.latest_vector.get(
                alert.subject, FeatureVector.from_list([0.0] * airs.FEATURE_DIM)
            )
        self._feedback_seq += 1
        record = make_feedback_record(
            feedback_id=f"F-{self._feedback_seq:06d}",
            alert_id=alert_id,
            feature_vector=vector,
            s_ai=s_ai,
            s_user=s_user,
            alpha=self.config.alpha,
            analyst_id=analyst_id,
            created_at=datetime.now(timezone.utc),
        )
        self.store.append_feedback(record)
        alert.feedback_ref = record.feedback_id
        self.store.upsert_alert(alert)

        retrained = self.maybe_retrain()
        return {
            "s_final": record.s_final,
            "feedback_id": record.feedback_id,
            "unconsumed_feedback": len(self.store.unconsumed_feedback()),
            "model_version": self._model.version if self._model else 0,
            "retrained": retrained is not None,
        }

    def maybe_retrain(self, force: bool = False) -> Optional[int]:
        model = self._model
        if model is None:
            if force and len(self.reservoir) >= airs.MIN_TRAIN_SAMPLES:
                model = airs.train_initial(self.reservoir.vectors(), self.hyper)
                self._publish_model(model)
                return model.version
            return None
        new_model = airs.maybe_retrain(
            model, self.store, self.reservoir,
            n_threshold=self.config.n_threshold, hyper=self.hyper, force=force,
            benign_threshold=self.prism_cfg.alert_threshold,
        )
        if new_model is None:
            return None
        self._publish_model(new_model)
        return new_model.version

    # -- read models ------------------------------------------------------------------

    def transition_alert(self, alert_id: str, new_status: str, note: str = "") -> Alert:
        return self.store.transition_alert(alert_id, AlertStatus(new_status), note=note)

    def dashboard_urgent(self, limit: int = 20) -> dict:
        open_alerts = self.store.alerts(status=AlertStatus.OPEN)
        open_alerts.sort(key=lambda a: (-a.score_value, a.alert_id))
        return {
            "urgent": [
                {
                    "alert_id": a.alert_id,
                    "subject": a.subject,
                    "severity": a.severity,
                    "origin": a.origin.value,
                    "score": a.score_value,
                    "created_at": a.created_at.strftime("%Y-%m-%dT%H:%M:%S"),
                    "recommendation": a.recommendation,
                }
                for a in open_alerts[:limit]
            ]
        }

    def dashboard_overview(self) -> dict:
        band_histogram = {"Low": 0, "Moderate": 0, "High": 0}
        latest_band_by_user: dict[str, str] = {}
        latest_at: dict[str, str] = {}
        for doc in self.store.scores():
            user = doc["user_id"]
            at = doc.get("at", "")
            if user not in latest_at or at >= latest_at[user]:
                latest_at[user] = at
                latest_band_by_user[user] = doc["prism"]["band"]
        for band in latest_band_by_user.values():
            band_histogram[band] += 1

        severity_distribution: dict[str, int] = {}
        hourly: dict[str, dict] = {}
        for alert in self.store.alerts():
            severity_distribution[alert.severity] = severity_distribution.get(alert.severity, 0) + 1
            bucket = alert.created_at.strftime("%Y-%m-%dT%H:00:00")
            slot = hourly.setdefault(bucket, {"alerts": 0, "score_sum": 0.0})
            slot["alerts"] += 1
            slot["score_sum"] += alert.score_value

        series = []
        if hourly:
            keys = sorted(hourly)
            start = datetime.strptime(keys[0], "%Y-%m-%dT%H:%M:%S")
            end = datetime.strptime(keys[-1], "%Y-%m-%dT%H:%M:%S")
            cursor = start
            while cursor <= end:
                key = cursor.strftime("%Y-%m-%dT%H:00:00")
                slot = hourly.get(key, {"alerts": 0, "score_sum": 0.0})
                series.append(
                    {
                        "hour": key,
                        "alerts": slot["alerts"],
                        "mean_score": (slot["score_sum"] / slot["alerts"]) if slot["alerts"] else 0.0,
                    }
                )
                cursor += timedelta(hours=1)

        return {
            "user_band_histogram": band_histogram,
            "users_scored": len(latest_band_by_user),
            "alert_severity_distribution": severity_distribution,
            "alert_total": sum(severity_distribution.values()),
            "hourly_risk_series": series,
        }

    def user_risk(self, user_id: str) -> dict:
        profile = self.store.get_profile(user_id)
        recent = [
            doc for doc in self.store.scores() if doc["user_id"] == user_id
        ]
        recent.sort(key=lambda d: d.get("at", ""), reverse=True)
        return {
            "user_id": user_id,
            "cumulative_risk": profile.cumulative_risk,
            "last_alert_at": profile.last_alert_at.strftime("%Y-%m-%dT%H:%M:%S")
            if profile.last_alert_at
            else None,
            "recent_scores": [
                {
                    "session_id": d["subject"],
                    "prism_normalized": d["prism"]["normalized"],
                    "band": d["prism"]["band"],
                    "s_ai": d.get("s_ai"),
                    "at": d.get("at"),
                }
                for d in recent[:50]
            ],
        }

    def metrics(self) -> dict:
        stats = self.store.stats()
        feedback = self.store.feedback_records()
        return {
            "store": stats.to_dict(),
            "model_version": self._model.version if self._model else 0,
            "model_trained_on": self._model.trained_on if self._model else 0,
            "feedback_total": len(feedback),
            "feedback_unconsumed": len(self.store.unconsumed_feedback()),
            "open_sessions": self.sessionizer.open_count,
            "baseline_reservoir": len(self.reservoir),
        }

    def close(self) -> None:
        self.store.close()


def _keyed_rows(service: IrmService, source: str, path: Path):
    # each CERT file is time-ordered; key rows so heapq.merge can interleave
    # the three streams without materializing them
    last_key = ""
    for row in iter_csv_rows(path):
        try:
            event = service.parse_row(source, row)
            last_key = event.timestamp.isoformat()
            yield (last_key, event.event_id, {"source": source, "row": row})
        except IrmError:
            yield (last_key, "", {"source": source, "row": row})


def ingest_directory(
    service: IrmService,
    cert_dir: str | Path,
    batch_size: Optional[int] = None,
) -> PipelineReport:
    """Stream-ingest a CERT-style directory (logon/device/file CSVs), then flush.

    The per-file streams are merge-sorted lazily, so directories larger than
    memory are fine as long as each file is time-ordered (CERT's are).
    """
    import heapq

    cert_dir = Path(cert_dir)
    batch_size = batch_size or service.config.ingest_batch_size
    streams = [
        _keyed_rows(service, source, cert_dir / filename)
        for source, filename in (("logon", "logon.csv"), ("device", "device.csv"), ("file", "file.csv"))
        if (cert_dir / filename).exists()
    ]

    total = PipelineReport()
    batch: list[dict] = []

    def run(batch_rows: list[dict]) -> None:
        report = service.run_pipeline(batch_rows)
        total.events_stored += report.events_stored
        total.duplicates += report.duplicates
        total.parse_errors.extend(report.parse_errors)
        total.sessions_scored += report.sessions_scored
        total.violations += report.violations
        total.alerts += report.alerts

    for _, _, item in heapq.merge(*streams):
        batch.append(item)
        if len(batch) >= batch_size:
            run(batch)
            batch = []
    if batch:
        run(batch)

    tail = service.flush_sessions()
    total.sessions_scored += tail.sessions_scored
    total.violations += tail.violations
    total.alerts += tail.alerts
    return total
