"""Exception types shared across the engine."""


class IrmError(Exception):
    """Base class for all engine errors."""

    code = "irm_error"


# --- ingestion ---

class MalformedRow(IrmError):
    code = "malformed_row"


class BadTimestamp(IrmError):
    code = "bad_timestamp"


class UnknownActivity(IrmError):
    code = "unknown_activity"


class DuplicateEvent(IrmError):
    code = "duplicate_event"


# --- scoring ---

class EmptySession(IrmError):
    code = "empty_session"


class SchemaMismatch(IrmError):
    code = "schema_mismatch"


class ShapeMismatch(IrmError):
    code = "shape_mismatch"


class UncalibratedModel(IrmError):
    code = "uncalibrated_model"


class OutOfRange(IrmError):
    code = "out_of_range"


class InsufficientData(IrmError):
    code = "insufficient_data"


# --- policies ---

class PolicyConfigError(IrmError):
    """Raised on invalid policy documents; carries per-entry diagnostics."""

    code = "policy_config_error"

    def __init__(self, message: str, entries: list[str] | None = None):
        super().__init__(message)
        self.entries = entries or []


class DuplicateAction(IrmError):
    code = "duplicate_action"


# --- store ---

class StorageFull(IrmError):
    code = "storage_full"


class CorruptSegment(IrmError):
    code = "corrupt_segment"


class InvalidRange(IrmError):
    code = "invalid_range"


class IllegalTransition(IrmError):
    code = "illegal_transition"


class MissingFeedback(IrmError):
    code = "missing_feedback"


# --- recommendations / evaluation ---

class AlertNotFound(IrmError):
    code = "alert_not_found"


class GeneratorTimeout(IrmError):
    code = "generator_timeout"


class LabelMismatch(IrmError):
    code = "label_mismatch"
