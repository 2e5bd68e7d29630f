"""Exception hierarchy. The CLI maps these onto exit codes."""


class AtcDemandError(Exception):
    """Base class for all package errors."""


class ConfigError(AtcDemandError, ValueError):
    """Invalid configuration or argument."""


class DataError(AtcDemandError, ValueError):
    """Malformed or out-of-range input data."""


class DegenerateFeatureError(DataError):
    """A feature cannot be normalised (zero variance or zero bound)."""

    def __init__(self, feature: str, detail: str = "zero variance"):
        super().__init__(f"feature {feature!r} is degenerate: {detail}")
        self.feature = feature


class NumericError(AtcDemandError, ArithmeticError):
    """Non-finite values appeared during a computation."""


class CheckpointError(AtcDemandError):
    """Checkpoint file is unreadable or corrupt."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""
