"""Adaptive risk scoring: autoencoder over session features with analyst feedback.

The model learns to reconstruct feature vectors of normal (rule-scored low)
sessions; reconstruction error, percentile-normalized, is the AI score.
Analyst slider feedback blends into a final score and, once enough feedback
accumulates, drives incremental retraining: score-lowering feedback joins the
baseline mix at extra weight, score-raising feedback is evicted from it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Optional, Protocol, Sequence

import numpy as np

from .errors import (
    InsufficientData,
    OutOfRange,
    SchemaMismatch,
    ShapeMismatch,
    UncalibratedModel,
)
from .events import AppContext, Privilege, Session, UserRecord
from .prism import FactorBreakdown

if TYPE_CHECKING:
    from .store import Alert

SCHEMA_VERSION = 1
FEATURE_DIM = 10

# scaling caps for point-valued features
ACTIVITY_CAP = 50.0
CONTEXT_CAP = 10.0
CUMULATIVE_CAP = 50.0
DEVICE_CAP = 10.0
EVENT_COUNT_CAP = 100.0
APP_COUNT_CAP = 6.0

PRIVILEGE_FEATURE = {
    Privilege.HIGH: 0.0,
    Privilege.MODERATE: 0.5,
    Privilege.LOW: 1.0,
    Privilege.GUEST: 1.0,
}

FEATURE_NAMES = [
    "privilege_level",
    "activity_points",
    "context_points",
    "ip_flag",
    "off_hours_flag",
    "device_points",
    "cumulative_points",
    "event_count",
    "distinct_apps",
    "sensitive_file_touched",
]


@dataclass
class FeatureVector:
    values: np.ndarray
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (FEATURE_DIM,):
            raise SchemaMismatch(
                f"schema v{self.schema_version} expects {FEATURE_DIM} features, got {self.values.shape}"
            )

    def to_list(self) -> list[float]:
        return [float(v) for v in self.values]

    @classmethod
    def from_list(cls, values: Sequence[float], schema_version: int = SCHEMA_VERSION) -> "FeatureVector":
        return cls(np.asarray(values, dtype=np.float64), schema_version)


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def featurize(
    session: Session,
    user: UserRecord,
    breakdown: FactorBreakdown | dict,
    sensitive_file_ids: Iterable[str] | bool = (),
) -> FeatureVector:
    """Deterministic [0,1]^10 embedding of a rule-scored session."""
    if isinstance(breakdown, dict):
        required = {"activity", "context", "ip", "hours", "device", "cumulative"}
        missing = required - breakdown.keys()
        if missing:
            raise SchemaMismatch(f"breakdown missing factors: {sorted(missing)}")
        breakdown = FactorBreakdown.from_dict(breakdown)

    if isinstance(sensitive_file_ids, bool):
        sensitive = sensitive_file_ids
    else:
        ids = set(sensitive_file_ids)
        sensitive = any(e.file_id in ids for e in session.events if e.file_id)

    apps = {e.app_context for e in session.events if e.app_context is not AppContext.UNKNOWN}

    values = np.array(
        [
            PRIVILEGE_FEATURE[user.privilege],
            _clamp01(breakdown.activity / ACTIVITY_CAP),
            _clamp01(breakdown.context / CONTEXT_CAP),
            1.0 if breakdown.ip > 0 else 0.0,
            1.0 if breakdown.hours > 0 else 0.0,
            _clamp01(breakdown.device / DEVICE_CAP),
            _clamp01(breakdown.cumulative / CUMULATIVE_CAP),
            _clamp01(len(session.events) / EVENT_COUNT_CAP),
            _clamp01(len(apps) / APP_COUNT_CAP),
            1.0 if sensitive else 0.0,
        ],
        dtype=np.float64,
    )
    return FeatureVector(values)


# ---------------------------------------------------------------------------
# Autoencoder
# ---------------------------------------------------------------------------

DEFAULT_LAYER_SIZES = [10, 6, 3, 6, 10]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class AutoencoderModel:
    layer_sizes: list[int]
    weights: list[np.ndarray]  # weights[l] has shape (out, in)
    biases: list[np.ndarray]
    calibration: Optional[tuple[float, float]] = None  # (err_p05, err_p95)
    trained_on: int = 0
    version: int = 0
    schema_version: int = SCHEMA_VERSION

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]


def init_model(layer_sizes: Sequence[int] | None = None, seed: int = 1234) -> AutoencoderModel:
    sizes = list(layer_sizes or DEFAULT_LAYER_SIZES)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return AutoencoderModel(layer_sizes=sizes, weights=weights, biases=biases)


def forward_batch(model: AutoencoderModel, x: np.ndarray) -> list[np.ndarray]:
    """All layer activations for a batch; activations[0] is the input."""
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeMismatch(f"expected (*, {model.input_dim}) input, got {x.shape}")
    activations = [x]
    a = x
    for w, b in zip(model.weights, model.biases):
        a = _sigmoid(a @ w.T + b)
        activations.append(a)
    return activations


def forward(model: AutoencoderModel, vector: FeatureVector | np.ndarray) -> np.ndarray:
    v = vector.values if isinstance(vector, FeatureVector) else np.asarray(vector, dtype=np.float64)
    if v.shape != (model.input_dim,):
        raise ShapeMismatch(f"expected ({model.input_dim},) input, got {v.shape}")
    return forward_batch(model, v[None, :])[-1][0]


def reconstruction_error(v: np.ndarray | FeatureVector, reconstruction: np.ndarray) -> float:
    a = v.values if isinstance(v, FeatureVector) else np.asarray(v, dtype=np.float64)
    b = np.asarray(reconstruction, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.mean(diff * diff))


def normalize_error(err: float, calibration: Optional[tuple[float, float]]) -> float:
    if calibration is None:
        raise UncalibratedModel("model has no calibration percentiles")
    p05, p95 = calibration
    return _clamp01((err - p05) / (p95 - p05))


def score_vector(model: AutoencoderModel, vector: FeatureVector) -> float:
    """S_AI for one feature vector under the current model."""
    rec = forward(model, vector)
    return normalize_error(reconstruction_error(vector, rec), model.calibration)


def blend_feedback(s_ai: float, s_user: float, alpha: float) -> float:
    for name, val in (("s_ai", s_ai), ("s_user", s_user), ("alpha", alpha)):
        if not (0.0 <= val <= 1.0):
            raise OutOfRange(f"{name}={val} outside [0,1]")
    return s_ai + alpha * (s_user - s_ai)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainHyper:
    # four stacked sigmoid layers need a hot rate and long horizon to escape
    # the constant-output plateau; still plain full-batch GD, fully seeded
    epochs: int = 20_000
    lr: float = 2.0
    seed: int = 1234
    holdout_frac: float = 0.2
    retrain_epochs: int = 20_000
    feedback_weight: float = 3.0


MIN_TRAIN_SAMPLES = 100


def weighted_loss(model: AutoencoderModel, x: np.ndarray, sample_weights: np.ndarray) -> float:
    out = forward_batch(model, x)[-1]
    per_sample = np.mean((out - x) ** 2, axis=1)
    return float(np.sum(sample_weights * per_sample) / np.sum(sample_weights))


def loss_and_gradients(
    model: AutoencoderModel, x: np.ndarray, sample_weights: np.ndarray | None = None
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Analytic gradients of the weighted reconstruction MSE."""
    n, d = x.shape
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    activations = forward_batch(model, x)
    out = activations[-1]
    per_sample = np.mean((out - x) ** 2, axis=1)
    total_w = np.sum(w)
    loss = float(np.sum(w * per_sample) / total_w)

    grad = (2.0 / d) * (out - x) * (w / total_w)[:, None]
    grads_w: list[np.ndarray] = [np.empty(0)] * len(model.weights)
    grads_b: list[np.ndarray] = [np.empty(0)] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        a_out = activations[layer + 1]
        delta = grad * a_out * (1.0 - a_out)
        grads_w[layer] = delta.T @ activations[layer]
        grads_b[layer] = delta.sum(axis=0)
        grad = delta @ model.weights[layer]
    return loss, grads_w, grads_b


def _gradient_descent(
    model: AutoencoderModel, x: np.ndarray, weights: np.ndarray, epochs: int, lr: float
) -> tuple[float, float]:
    initial = weighted_loss(model, x, weights)
    final = initial
    for _ in range(epochs):
        final, gw, gb = loss_and_gradients(model, x, weights)
        for layer in range(len(model.weights)):
            model.weights[layer] -= lr * gw[layer]
            model.biases[layer] -= lr * gb[layer]
    return initial, final


# A converged model can interpolate its baseline, collapsing the raw p05..p95
# error band to ~1e-4; scores would then read measurement noise. The band is
# floored at the error of a single feature component drifting ~0.15.
MIN_CALIBRATION_BAND = 0.002


def _calibrate(model: AutoencoderModel, x: np.ndarray) -> tuple[float, float]:
    out = forward_batch(model, x)[-1]
    errors = np.mean((out - x) ** 2, axis=1)
    p05, p95 = np.percentile(errors, [5.0, 95.0])
    if p95 < p05 + MIN_CALIBRATION_BAND:
        p95 = p05 + MIN_CALIBRATION_BAND
    return float(p05), float(p95)


def train_initial(
    dataset: Sequence[FeatureVector],
    hyper: TrainHyper | None = None,
    layer_sizes: Sequence[int] | None = None,
) -> AutoencoderModel:
    """Train a fresh model on a normal-session baseline.

    Requires >= 100 samples; calibration percentiles come from a held-out
    20% split. Deterministic under a fixed hyper.seed.
    """
    hyper = hyper or TrainHyper()
    if len(dataset) < MIN_TRAIN_SAMPLES:
        raise InsufficientData(f"need >= {MIN_TRAIN_SAMPLES} baseline samples, got {len(dataset)}")

    x = np.stack([fv.values for fv in dataset])
    rng = np.random.default_rng(hyper.seed)
    order = rng.permutation(len(x))
    n_holdout = max(1, int(len(x) * hyper.holdout_frac))
    holdout = x[order[:n_holdout]]
    train = x[order[n_holdout:]]

    model = init_model(layer_sizes, seed=hyper.seed)
    _gradient_descent(model, train, np.ones(len(train)), hyper.epochs, hyper.lr)
    model.calibration = _calibrate(model, holdout)
    model.trained_on = len(train)
    model.version = 1
    return model


# ---------------------------------------------------------------------------
# Feedback records and incremental retraining
# ---------------------------------------------------------------------------


@dataclass
class FeedbackRecord:
    feedback_id: str
    alert_id: str
    feature_vector: FeatureVector
    s_ai: float
    s_user: float
    alpha_used: float
    s_final: float
    analyst_id: str = ""
    created_at: Optional[datetime] = None
    consumed_in_retrain: bool = False

    def to_dict(self) -> dict:
        return {
            "feedback_id": self.feedback_id,
            "alert_id": self.alert_id,
            "feature_vector": self.feature_vector.to_list(),
            "schema_version": self.feature_vector.schema_version,
            "s_ai": self.s_ai,
            "s_user": self.s_user,
            "alpha_used": self.alpha_used,
            "s_final": self.s_final,
            "analyst_id": self.analyst_id,
            "created_at": self.created_at.strftime("%Y-%m-%dT%H:%M:%S") if self.created_at else None,
            "consumed_in_retrain": self.consumed_in_retrain,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeedbackRecord":
        created = d.get("created_at")
        return cls(
            feedback_id=d["feedback_id"],
            alert_id=d["alert_id"],
            feature_vector=FeatureVector.from_list(d["feature_vector"], d.get("schema_version", SCHEMA_VERSION)),
            s_ai=d["s_ai"],
            s_user=d["s_user"],
            alpha_used=d["alpha_used"],
            s_final=d["s_final"],
            analyst_id=d.get("analyst_id", ""),
            created_at=datetime.strptime(created, "%Y-%m-%dT%H:%M:%S") if created else None,
            consumed_in_retrain=d.get("consumed_in_retrain", False),
        )


def make_feedback_record(
    feedback_id: str,
    alert_id: str,
    feature_vector: FeatureVector,
    s_ai: float,
    s_user: float,
    alpha: float,
    analyst_id: str = "",
    created_at: Optional[datetime] = None,
) -> FeedbackRecord:
    s_final = blend_feedback(s_ai, s_user, alpha)
    return FeedbackRecord(
        feedback_id=feedback_id,
        alert_id=alert_id,
        feature_vector=feature_vector,
        s_ai=s_ai,
        s_user=s_user,
        alpha_used=alpha,
        s_final=s_final,
        analyst_id=analyst_id,
        created_at=created_at,
    )


class FeedbackSource(Protocol):
    def unconsumed_feedback(self) -> list[FeedbackRecord]: ...

    def mark_feedback_consumed(self, feedback_ids: Sequence[str]) -> None: ...


class BaselineReservoir:
    """Capped pool of normal-session vectors used as the retraining substrate.

    Analyst-confirmed vectors keep their feedback weight permanently; without
    that, the next retrain's fresh feedback outweighs older corrections and
    the model forgets them.
    """

    def __init__(self, capacity: int = 500, seed: int = 99):
        self.capacity = capacity
        self._rng = np.random.default_rng(seed)
        self._entries: list[tuple[FeatureVector, float]] = []
        self._seen = 0

    def add(self, vector: FeatureVector, weight: float = 1.0) -> None:
        self._seen += 1
        if len(self._entries) < self.capacity:
            self._entries.append((vector, weight))
            return
        j = int(self._rng.integers(0, self._seen))
        if j < self.capacity:
            self._entries[j] = (vector, weight)

    def extend(self, vectors: Iterable[FeatureVector], weight: float = 1.0) -> None:
        for v in vectors:
            self.add(v, weight)

    def vectors(self) -> list[FeatureVector]:
        return [v for v, _ in self._entries]

    def weighted(self) -> tuple[list[FeatureVector], list[float]]:
        return [v for v, _ in self._entries], [w for _, w in self._entries]

    def remove_matching(self, targets: Sequence[FeatureVector]) -> int:
        """Evict reservoir entries equal to any target vector."""
        arrays = [t.values for t in targets]
        kept = [
            (v, w) for v, w in self._entries
            if not any(np.array_equal(v.values, a) for a in arrays)
        ]
        removed = len(self._entries) - len(kept)
        self._entries = kept
        return removed

    def __len__(self) -> int:
        return len(self._entries)


DEFAULT_RETRAIN_THRESHOLD = 50


def maybe_retrain(
    model: AutoencoderModel,
    feedback_store: FeedbackSource,
    reservoir: BaselineReservoir,
    n_threshold: int = DEFAULT_RETRAIN_THRESHOLD,
    hyper: TrainHyper | None = None,
    force: bool = False,
    benign_threshold: float = 0.3,
) -> Optional[AutoencoderModel]:
    """Fine-tune from current weights once enough feedback has accumulated.

    Feedback that marks a session benign (slider below the alert threshold)
    rejoins the baseline mix at extra weight; feedback that keeps it risky is
    treated as a confirmed outlier and evicted from the mix. Routing on the
    slider band rather than raw direction keeps a 0.95 slider on a saturated
    S_AI of 1.0 out of the baseline. Returns the new model (version bumped,
    recalibrated) or None.
    """
    hyper = hyper or TrainHyper()
    pending = feedback_store.unconsumed_feedback()
    if not force and len(pending) < n_threshold:
        return None
    if not pending and not reservoir.vectors():
        return None

    lowered = [fr for fr in pending if fr.s_user < benign_threshold]
    raised = [fr for fr in pending if fr.s_user >= benign_threshold]

    reservoir.remove_matching([fr.feature_vector for fr in raised])
    base, base_weights = reservoir.weighted()
    raised_arrays = [fr.feature_vector.values for fr in raised]

    mix: list[np.ndarray] = [v.values for v in base]
    weights: list[float] = list(base_weights)
    for fr in lowered:
        mix.append(fr.feature_vector.values)
        weights.append(hyper.feedback_weight)
    if not mix:
        return None

    new_model = AutoencoderModel(
        layer_sizes=list(model.layer_sizes),
        weights=[w.copy() for w in model.weights],
        biases=[b.copy() for b in model.biases],
        calibration=model.calibration,
        trained_on=model.trained_on,
        version=model.version,
        schema_version=model.schema_version,
    )
    x = np.stack(mix)
    w = np.asarray(weights)
    _gradient_descent(new_model, x, w, hyper.retrain_epochs, hyper.lr)

    # calibrate on the normal mix only; confirmed outliers stay out
    calib_rows = [row for row in mix if not any(np.array_equal(row, a) for a in raised_arrays)]
    new_model.calibration = _calibrate(new_model, np.stack(calib_rows) if calib_rows else x)
    new_model.trained_on = len(mix)
    new_model.version = model.version + 1

    # analyst-confirmed-normal sessions permanently edit the definition of
    # normal, keeping their priority weight for future retrains
    reservoir.extend([fr.feature_vector for fr in lowered], weight=hyper.feedback_weight)

    feedback_store.mark_feedback_consumed([fr.feedback_id for fr in pending])
    return new_model


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def model_to_dict(model: AutoencoderModel) -> dict:
    return {
        "schema_version": model.schema_version,
        "layer_sizes": list(model.layer_sizes),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "calibration": list(model.calibration) if model.calibration else None,
        "trained_on": model.trained_on,
        "version": model.version,
    }


def model_from_dict(doc: dict) -> AutoencoderModel:
    calib = doc.get("calibration")
    return AutoencoderModel(
        layer_sizes=list(doc["layer_sizes"]),
        weights=[np.asarray(w, dtype=np.float64) for w in doc["weights"]],
        biases=[np.asarray(b, dtype=np.float64) for b in doc["biases"]],
        calibration=(calib[0], calib[1]) if calib else None,
        trained_on=doc.get("trained_on", 0),
        version=doc.get("version", 0),
        schema_version=doc.get("schema_version", SCHEMA_VERSION),
    )


def save_model(model: AutoencoderModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path: str | Path) -> AutoencoderModel:
    return model_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Cumulative risk profiles
# ---------------------------------------------------------------------------

PROFILE_HALF_LIFE = timedelta(days=7)
SCORE_HISTORY_LIMIT = 1000
DEFAULT_CUMULATIVE_ALERT_THRESHOLD = 5.0


@dataclass
class RiskProfile:
    user_id: str
    cumulative_risk: float = 0.0
    last_update_at: Optional[datetime] = None
    last_alert_at: Optional[datetime] = None
    score_history: list[tuple[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        fmt = "%Y-%m-%dT%H:%M:%S"
        return {
            "user_id": self.user_id,
            "cumulative_risk": self.cumulative_risk,
            "last_update_at": self.last_update_at.strftime(fmt) if self.last_update_at else None,
            "last_alert_at": self.last_alert_at.strftime(fmt) if self.last_alert_at else None,
            "score_history": [[t, s] for t, s in self.score_history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RiskProfile":
        fmt = "%Y-%m-%dT%H:%M:%S"
        parse = lambda v: datetime.strptime(v, fmt) if v else None
        return cls(
            user_id=d["user_id"],
            cumulative_risk=d.get("cumulative_risk", 0.0),
            last_update_at=parse(d.get("last_update_at")),
            last_alert_at=parse(d.get("last_alert_at")),
            score_history=[(t, s) for t, s in d.get("score_history", [])],
        )


def decay_factor(elapsed: timedelta, half_life: timedelta = PROFILE_HALF_LIFE) -> float:
    if elapsed.total_seconds() <= 0:
        return 1.0
    return 0.5 ** (elapsed.total_seconds() / half_life.total_seconds())


def update_profile(
    profile: RiskProfile,
    s_final: float,
    at: datetime,
    cumulative_alert_threshold: float = DEFAULT_CUMULATIVE_ALERT_THRESHOLD,
    half_life: timedelta = PROFILE_HALF_LIFE,
    score_ref: str = "",
) -> tuple[RiskProfile, Optional["Alert"]]:
    """Decay the running risk, add the new score, edge-trigger a crossing alert."""
    if not (0.0 <= s_final <= 1.0):
        raise OutOfRange(f"s_final={s_final} outside [0,1]")

    before = profile.cumulative_risk
    if profile.last_update_at is not None:
        before *= decay_factor(at - profile.last_update_at, half_life)
    after = before + s_final

    profile.cumulative_risk = after
    profile.last_update_at = at
    profile.score_history.append((score_ref, s_final))
    if len(profile.score_history) > SCORE_HISTORY_LIMIT:
        del profile.score_history[: len(profile.score_history) - SCORE_HISTORY_LIMIT]

    alert = None
    if before < cumulative_alert_threshold <= after:
        from .store import Alert, AlertOrigin

        profile.last_alert_at = at
        alert = Alert.build(
            created_at=at,
            subject=profile.user_id,
            origin=AlertOrigin.CUMULATIVE_RISK,
            origin_ref=score_ref or profile.user_id,
            severity="High",
        )
    return profile, alert
