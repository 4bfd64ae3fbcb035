"""Throughput and query-latency benchmarks for the event store."""

from __future__ import annotations

import time
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Iterator, Sequence

import numpy as np

from .events import Activity, ActivityEvent, Source
from .store import RiskStore


@dataclass
class BenchResult:
    target_rate: int
    achieved_rate: float
    events: int
    duration_s: float
    query_p50_ms: float
    query_p95_ms: float
    query_p99_ms: float

    def row(self) -> str:
        return (
            f"{self.target_rate:>12,} {self.achieved_rate:>14,.0f} {self.events:>12,} "
            f"{self.duration_s:>10.1f} {self.query_p50_ms:>10.2f} {self.query_p95_ms:>10.2f} "
            f"{self.query_p99_ms:>10.2f}"
        )

    @staticmethod
    def header() -> str:
        return (
            f"{'target eps':>12} {'achieved eps':>14} {'events':>12} "
            f"{'ingest s':>10} {'q p50 ms':>10} {'q p95 ms':>10} {'q p99 ms':>10}"
        )


def synth_events(
    n: int,
    start: datetime,
    n_users: int = 1000,
    prefix: str = "B",
    offset: int = 0,
) -> Iterator[ActivityEvent]:
    """Cheap deterministic synthetic file events spread across users and time."""
    for i in range(offset, offset + n):
        yield ActivityEvent(
            event_id=f"{{{prefix}{i}}}",
            timestamp=start + timedelta(seconds=i // 100),
            user_id=f"USER{i % n_users:04d}",
            device_id=f"PC-{i % 500:04d}",
            source=Source.FILE,
            activity=Activity.FILE_WRITE,
            file_id=f"f-{i % 5000:05d}",
        )


def bench_ingest(
    store: RiskStore,
    rate: int,
    duration_s: float,
    batch_size: int = 2000,
    n_users: int = 1000,
    paced: bool = True,
) -> tuple[int, float]:
    """Push synthetic events for duration_s; returns (events_appended, elapsed_s).

    Paced mode sleeps to hold the target rate; unpaced mode measures the
    maximum sustainable rate.
    """
    start_ts = datetime(2012, 1, 1, tzinfo=timezone.utc)
    total = 0
    t0 = time.monotonic()
    deadline = t0 + duration_s
    while time.monotonic() < deadline:
        batch = list(synth_events(batch_size, start_ts, n_users, offset=total))
        store.append_events(batch)
        total += batch_size
        if paced:
            expected = t0 + total / rate
            now = time.monotonic()
            if expected > now:
                time.sleep(min(expected - now, deadline - now if deadline > now else 0))
    return total, time.monotonic() - t0


def fill_store(store: RiskStore, n_events: int, n_users: int = 1000, batch_size: int = 20000) -> int:
    """Top a store up to at least n_events synthetic events."""
    start_ts = datetime(2012, 1, 1, tzinfo=timezone.utc)
    added = 0
    offset = store.event_count
    while store.event_count < n_events:
        chunk = min(batch_size, n_events - store.event_count)
        batch = list(synth_events(chunk, start_ts, n_users, prefix="F", offset=offset + added))
        store.append_events(batch)
        added += chunk
    return added


def bench_queries(
    store: RiskStore,
    n_queries: int = 200,
    n_users: int = 1000,
    seed: int = 7,
) -> dict[str, float]:
    """Random per-user range queries; returns latency percentiles in ms."""
    rng = np.random.default_rng(seed)
    lo = datetime(2012, 1, 1, tzinfo=timezone.utc)
    hi = lo + timedelta(days=30)
    latencies = []
    for _ in range(n_queries):
        user = f"USER{int(rng.integers(0, n_users)):04d}"
        t0 = time.perf_counter()
        store.query_events(user, lo, hi, limit=1000)
        latencies.append((time.perf_counter() - t0) * 1000.0)
    latencies.sort()

    def pct(q: float) -> float:
        return latencies[min(len(latencies) - 1, int(q * len(latencies)))]

    return {"p50": pct(0.50), "p95": pct(0.95), "p99": pct(0.99)}


def run_bench(
    data_dir: str,
    rates: Sequence[int],
    duration_s: float,
    n_queries: int = 200,
    n_users: int = 1000,
) -> list[BenchResult]:
    results = []
    for rate in rates:
        store = RiskStore(f"{data_dir}/rate-{rate}")
        events, elapsed = bench_ingest(store, rate, duration_s, n_users=n_users)
        q = bench_queries(store, n_queries=n_queries, n_users=n_users)
        results.append(
            BenchResult(
                target_rate=rate,
                achieved_rate=events / elapsed if elapsed else 0.0,
                events=events,
                duration_s=elapsed,
                query_p50_ms=q["p50"],
                query_p95_ms=q["p95"],
                query_p99_ms=q["p99"],
            )
        )
        store.close()
    return results
