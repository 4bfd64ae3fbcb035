"""Detection metrics and the feedback-loop experiment harness.

Computes confusion matrices and FPR/TPR/FNR per scorer over a labeled
session fixture, sweeps thresholds, and replays analyst-feedback retraining
iterations to chart how error rates move. The shipped experiment runs on a
seeded synthetic fixture; headline numbers from any particular production
deployment are not reproducible from public data, so the harness reproduces
the experiment's shape, not those numbers.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .airs import (
    AutoencoderModel,
    BaselineReservoir,
    FeatureVector,
    FeedbackRecord,
    TrainHyper,
    make_feedback_record,
    maybe_retrain,
    score_vector,
    train_initial,
)
from .errors import InsufficientData, LabelMismatch


class Truth(str, Enum):
    BENIGN = "Benign"
    MALICIOUS = "Malicious"


@dataclass
class LabeledSession:
    session_id: str
    truth: Truth
    note: str = ""


def load_labels(path: str | Path) -> list[LabeledSession]:
    """Labels CSV: session_id,label,note (header optional)."""
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.lower().startswith("session_id"):
            continue
        fields = next(csv.reader(io.StringIO(line)))
        fields += [""] * (3 - len(fields))
        out.append(LabeledSession(fields[0].strip(), Truth(fields[1].strip()), fields[2].strip()))
    return out


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    scorer: str = ""
    fixture_id: str = ""
    generated_at: Optional[datetime] = None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def fpr(self) -> float:
        denom = self.fp + self.tn
        return self.fp / denom if denom else 0.0

    @property
    def tpr(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def fnr(self) -> float:
        denom = self.tp + self.fn
        return self.fn / denom if denom else 0.0

    def to_dict(self) -> dict:
        return {
            "scorer": self.scorer,
            "fixture_id": self.fixture_id,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "fpr": self.fpr,
            "tpr": self.tpr,
            "fnr": self.fnr,
            "generated_at": self.generated_at.strftime("%Y-%m-%dT%H:%M:%S") if self.generated_at else None,
        }


def score_and_classify(scores: dict[str, float], threshold: float) -> dict[str, Truth]:
    """Predicted malicious iff normalized score >= threshold."""
    return {
        sid: Truth.MALICIOUS if score >= threshold else Truth.BENIGN
        for sid, score in scores.items()
    }


def confusion(
    predicted: dict[str, Truth],
    truth: dict[str, Truth],
    scorer: str = "",
    fixture_id: str = "",
) -> MetricsReport:
    if set(predicted) != set(truth):
        missing = set(truth) ^ set(predicted)
        raise LabelMismatch(f"prediction/label id sets differ on {sorted(missing)[:5]}")
    tp = fp = tn = fn = 0
    for sid, actual in truth.items():
        pred = predicted[sid]
        if actual is Truth.MALICIOUS:
            if pred is Truth.MALICIOUS:
                tp += 1
            else:
                fn += 1
        else:
            if pred is Truth.MALICIOUS:
                fp += 1
            else:
                tn += 1
    return MetricsReport(
        tp=tp, fp=fp, tn=tn, fn=fn, scorer=scorer, fixture_id=fixture_id,
        generated_at=datetime.now(timezone.utc),
    )


def compare_reports(baseline: MetricsReport, improved: MetricsReport) -> dict:
    """Improvement ratios between two scorers; only meaningful with both present."""
    def _reduction(a: float, b: float) -> Optional[float]:
        return (a - b) / a if a > 0 else None

    return {
        "fpr_reduction": _reduction(baseline.fpr, improved.fpr),
        "tpr_increase": _reduction(-baseline.tpr, -improved.tpr) if baseline.tpr > 0 else None,
        "fnr_reduction": _reduction(baseline.fnr, improved.fnr),
    }


def threshold_sweep(
    scores: dict[str, float],
    truth: dict[str, Truth],
    n_points: int = 100,
) -> list[tuple[float, float, float]]:
    """(threshold, FPR, TPR) over an even sweep of [0, 1]."""
    rows = []
    for i in range(n_points + 1):
        threshold = i / n_points
        report = confusion(score_and_classify(scores, threshold), truth)
        rows.append((threshold, report.fpr, report.tpr))
    return rows


# ---------------------------------------------------------------------------
# Feedback-loop experiment
# ---------------------------------------------------------------------------


@dataclass
class FeedbackIteration:
    iteration: int
    fpr: float
    fnr: float
    tpr: float
    # mean |S_AI - S_user| over the feedback consumed by this iteration's
    # retrain, measured with the pre-retrain and post-retrain models
    mean_gap_before: Optional[float] = None
    mean_gap_after: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "fpr": self.fpr,
            "fnr": self.fnr,
            "tpr": self.tpr,
            "mean_gap_before": self.mean_gap_before,
            "mean_gap_after": self.mean_gap_after,
        }


class _ListFeedback:
    """Minimal in-memory feedback source for the experiment loop."""

    def __init__(self):
        self.records: list[FeedbackRecord] = []

    def add(self, record: FeedbackRecord) -> None:
        self.records.append(record)

    def unconsumed_feedback(self) -> list[FeedbackRecord]:
        return [r for r in self.records if not r.consumed_in_retrain]

    def mark_feedback_consumed(self, ids: Sequence[str]) -> None:
        wanted = set(ids)
        for r in self.records:
            if r.feedback_id in wanted:
                r.consumed_in_retrain = True


@dataclass
class FeedbackLoopResult:
    iterations: list[FeedbackIteration]
    models: list[AutoencoderModel] = field(default_factory=list)

    def to_plot_data(self) -> dict:
        return {
            "series": {
                "iteration": [r.iteration for r in self.iterations],
                "fpr": [r.fpr for r in self.iterations],
                "fnr": [r.fnr for r in self.iterations],
                "tpr": [r.tpr for r in self.iterations],
            }
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["iteration", "fpr", "fnr", "tpr", "mean_gap_before", "mean_gap_after"])
        for r in self.iterations:
            writer.writerow([
                r.iteration, f"{r.fpr:.6f}", f"{r.fnr:.6f}", f"{r.tpr:.6f}",
                "" if r.mean_gap_before is None else f"{r.mean_gap_before:.6f}",
                "" if r.mean_gap_after is None else f"{r.mean_gap_after:.6f}",
            ])
        return buf.getvalue()


def run_feedback_experiment(
    vectors: dict[str, FeatureVector],
    prism_normals: dict[str, float],
    truth: dict[str, Truth],
    iterations: int = 2,
    threshold: float = 0.3,
    alpha: float = 0.5,
    hyper: TrainHyper | None = None,
    analyst: Callable[[str, float], float] | None = None,
    feedback_enabled: bool = True,
    waves: Optional[dict[str, int]] = None,
) -> FeedbackLoopResult:
    """Train, score, collect synthetic analyst feedback, retrain, repeat.

    ``analyst`` maps (session_id, s_ai) to the slider score; the default
    oracle analyst answers 0.05 for truth-benign and 0.95 for truth-malicious
    alerts. Each alert is reviewed once. ``waves`` staggers review
    availability (iteration k reviews sessions with wave <= k), mirroring
    periodic triage over an accumulating backlog. Requires >= 2 iterations
    (a curve needs at least two points).
    """
    if iterations < 2:
        raise InsufficientData("feedback curve needs at least 2 iterations")
    hyper = hyper or TrainHyper()
    if analyst is None:
        analyst = lambda sid, s_ai: 0.05 if truth[sid] is Truth.BENIGN else 0.95
    waves = waves or {}
    reviewed: set[str] = set()

    baseline_ids = [sid for sid, p in prism_normals.items() if p < threshold]
    baseline = [vectors[sid] for sid in baseline_ids]
    model = train_initial(baseline, hyper)

    reservoir = BaselineReservoir(capacity=len(vectors) + 500, seed=hyper.seed)
    reservoir.extend(baseline)
    feedback = _ListFeedback()
    fid = 0

    result = FeedbackLoopResult(iterations=[], models=[])

    def evaluate(iteration: int, gap_before: Optional[float], gap_after: Optional[float]) -> None:
        scores = {sid: score_vector(model, fv) for sid, fv in vectors.items()}
        report = confusion(score_and_classify(scores, threshold), truth, scorer="AIRS")
        result.iterations.append(
            FeedbackIteration(
                iteration=iteration, fpr=report.fpr, fnr=report.fnr, tpr=report.tpr,
                mean_gap_before=gap_before, mean_gap_after=gap_after,
            )
        )

    evaluate(0, None, None)

    for it in range(1, iterations + 1):
        gap_before = gap_after = None
        if feedback_enabled:
            alerts = sorted(
                (
                    (sid, s_ai)
                    for sid, fv in vectors.items()
                    if sid not in reviewed
                    and waves.get(sid, 1) <= it
                    and (s_ai := score_vector(model, fv)) >= threshold
                ),
                key=lambda t: (-t[1], t[0]),
            )
            for sid, s_ai in alerts:
                reviewed.add(sid)
                fid += 1
                feedback.add(
                    make_feedback_record(
                        feedback_id=f"F-{fid}",
                        alert_id=sid,
                        feature_vector=vectors[sid],
                        s_ai=s_ai,
                        s_user=analyst(sid, s_ai),
                        alpha=alpha,
                    )
                )
            pending = feedback.unconsumed_feedback()
            if pending:
                gap_before = float(np.mean([abs(r.s_ai - r.s_user) for r in pending]))
            new_model = maybe_retrain(
                model, feedback, reservoir, hyper=hyper, force=True, benign_threshold=threshold
            )
            if new_model is not None:
                model = new_model
            if pending:
                gap_after = float(
                    np.mean([abs(score_vector(model, r.feature_vector) - r.s_user) for r in pending])
                )
        result.models.append(model)
        evaluate(it, gap_before, gap_after)

    return result


def write_outputs(result: FeedbackLoopResult, out_dir: str | Path, reports: Sequence[MetricsReport] = ()) -> dict:
    """Emit metrics JSON, CSV table, and plot-data JSON; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics": out / "metrics.json",
        "curve_csv": out / "feedback_curve.csv",
        "plot_data": out / "plot_data.json",
    }
    paths["metrics"].write_text(
        json.dumps(
            {
                "iterations": [r.to_dict() for r in result.iterations],
                "reports": [r.to_dict() for r in reports],
            },
            indent=2,
        )
    )
    paths["curve_csv"].write_text(result.to_csv())
    paths["plot_data"].write_text(json.dumps(result.to_plot_data(), indent=2))
    return {k: str(v) for k, v in paths.items()}
