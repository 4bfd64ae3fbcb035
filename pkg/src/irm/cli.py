"""Command-line entry points: ingest, score, serve, eval, bench, store verify."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import bench as bench_mod
from . import evaluation
from .airs import FeatureVector
from .service import IrmService, ServiceConfig, ingest_directory
from .store import RiskStore


def _load_config(config_path: str | None, data_dir: str | None, fixture_dir: str | None = None) -> ServiceConfig:
    path = config_path
    if path is None and fixture_dir is not None:
        candidate = Path(fixture_dir) / "config.json"
        if candidate.exists():
            path = str(candidate)
    try:
        cfg = ServiceConfig.from_json(path) if path else ServiceConfig()
    except (OSError, ValueError, KeyError) as exc:
        raise click.UsageError(f"bad config {path}: {exc}")
    if path is None:
        cfg.apply_env_overrides()
    if data_dir:
        cfg.data_dir = data_dir
    return cfg


@click.group()
def main() -> None:
    """Insider risk management engine."""


@main.command()
@click.option("--dir", "cert_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--data-dir", default=None, help="Store directory (overrides config).")
@click.option("--batch-size", default=None, type=int)
def ingest(cert_dir: str, config_path: str | None, data_dir: str | None, batch_size: int | None) -> None:
    """Batch-ingest a CERT-style CSV directory and run the full pipeline."""
    cfg = _load_config(config_path, data_dir, fixture_dir=cert_dir)
    service = IrmService(cfg)
    try:
        report = ingest_directory(service, cert_dir, batch_size=batch_size)
    finally:
        service.close()
    click.echo(
        f"events={report.events_stored} duplicates={report.duplicates} "
        f"errors={len(report.parse_errors)} sessions={report.sessions_scored} "
        f"violations={report.violations} alerts={report.alerts}"
    )


@main.command()
@click.option("--session", "session_id", required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--data-dir", default=None)
def score(session_id: str, config_path: str | None, data_dir: str | None) -> None:
    """Print both scorers' breakdowns for a stored session."""
    cfg = _load_config(config_path, data_dir)
    service = IrmService(cfg)
    try:
        doc = service.store.get_score(session_id)
        if doc is None:
            click.echo(f"session {session_id} not found", err=True)
            sys.exit(1)
        prism = doc["prism"]
        click.echo(f"session {session_id} user={doc['user_id']}")
        click.echo(
            f"  PRISM raw={prism['raw']:.3f} normalized={prism['normalized']:.3f} band={prism['band']}"
        )
        for factor in ("activity", "context", "ip", "hours", "device", "cumulative"):
            click.echo(f"    {factor:>10}: {prism['breakdown'][factor]}")
        click.echo(f"    multiplier: {prism['breakdown']['privilege_multiplier']}")
        s_ai = doc.get("s_ai")
        click.echo(f"  AIRS s_ai={'n/a' if s_ai is None else f'{s_ai:.3f}'}")
        click.echo(f"  features={doc['features']}")
    finally:
        service.close()


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
def serve(config_path: str, host: str | None, port: int | None) -> None:
    """Run the HTTP API."""
    if not Path(config_path).exists():
        raise click.UsageError(f"config not found: {config_path}")
    cfg = _load_config(config_path, None)
    if host:
        cfg.host = host
    if port:
        cfg.port = port
    import uvicorn

    from .api import create_app

    service = IrmService(cfg)
    uvicorn.run(create_app(service), host=cfg.host, port=cfg.port, log_level="warning")


@main.command("eval")
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--data-dir", default=None)
@click.option("--out", "out_dir", default="eval-out")
@click.option("--iterations", default=2, type=int)
@click.option("--threshold", default=0.3, type=float)
def eval_cmd(
    labels_path: str,
    config_path: str | None,
    data_dir: str | None,
    out_dir: str,
    iterations: int,
    threshold: float,
) -> None:
    """Score labeled sessions, run the feedback-loop experiment, emit reports."""
    cfg = _load_config(config_path, data_dir)
    service = IrmService(cfg)
    try:
        labels = evaluation.load_labels(labels_path)
        truth = {ls.session_id: ls.truth for ls in labels}
        vectors: dict[str, FeatureVector] = {}
        prism_normals: dict[str, float] = {}
        for doc in service.store.scores():
            sid = doc["subject"]
            if sid in truth and doc.get("features"):
                vectors[sid] = FeatureVector.from_list(doc["features"])
                prism_normals[sid] = doc["prism"]["normalized"]
        missing = set(truth) - set(vectors)
        if missing:
            click.echo(f"{len(missing)} labeled sessions missing from store", err=True)
            sys.exit(1)

        waves = {}
        for ls in labels:
            if ls.note.startswith("wave="):
                waves[ls.session_id] = int(ls.note.split("=", 1)[1])

        prism_report = evaluation.confusion(
            evaluation.score_and_classify(prism_normals, threshold), truth, scorer="PRISM"
        )
        result = evaluation.run_feedback_experiment(
            vectors, prism_normals, truth,
            iterations=iterations, threshold=threshold,
            alpha=cfg.alpha, hyper=service.hyper, waves=waves or None,
        )
        paths = evaluation.write_outputs(result, out_dir, reports=[prism_report])
        click.echo(f"PRISM  fpr={prism_report.fpr:.3f} tpr={prism_report.tpr:.3f} fnr={prism_report.fnr:.3f}")
        for row in result.iterations:
            click.echo(f"AIRS[{row.iteration}] fpr={row.fpr:.3f} tpr={row.tpr:.3f} fnr={row.fnr:.3f}")
        click.echo(f"wrote {paths['metrics']}, {paths['curve_csv']}, {paths['plot_data']}")
    finally:
        service.close()


@main.command()
@click.option("--rate", default=10000, type=int, help="Target events/sec.")
@click.option("--duration", default=30, type=float, help="Seconds per rate step.")
@click.option("--data-dir", default=None, help="Bench store directory (default: temp).")
@click.option("--sweep/--no-sweep", default=False, help="Also run 1k and rate/10 steps.")
def bench(rate: int, duration: float, data_dir: str | None, sweep: bool) -> None:
    """Measure ingest rate vs query latency; prints one row per rate step."""
    import tempfile

    rates = sorted({1000, rate // 10, rate}) if sweep else [rate]
    rates = [r for r in rates if r > 0]
    workdir = data_dir or tempfile.mkdtemp(prefix="irm-bench-")
    results = bench_mod.run_bench(workdir, rates, duration)
    click.echo(bench_mod.BenchResult.header())
    for res in results:
        click.echo(res.row())


@main.group()
def store() -> None:
    """Store maintenance."""


@store.command()
@click.option("--data-dir", required=True, type=click.Path(exists=True, file_okay=False))
def verify(data_dir: str) -> None:
    """Check segment checksums and line integrity."""
    s = RiskStore(data_dir)
    try:
        report = s.verify()
    finally:
        s.close()
    click.echo(json.dumps(report))
    if report["corrupt"]:
        sys.exit(1)


if __name__ == "__main__":
    main()
