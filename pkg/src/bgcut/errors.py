"""Error classes shared across bgcut modules.

Every error carries an ``exit_code`` category so the CLI can map failures to
process exit codes without inspecting messages.
"""

from typing import Any, Optional


class BgCutError(Exception):
    """Base class for bgcut errors."""

    exit_code: int = 1


class ConfigError(BgCutError):
    """Configuration is invalid or cannot be loaded."""

    exit_code = 2


class PreconditionError(BgCutError, ValueError):
    """An operation precondition is violated."""

    exit_code = 3


class ShapeError(PreconditionError):
    """Tensor shapes are inconsistent with the operation."""


class NonFiniteError(BgCutError, ArithmeticError):
    """A tensor, gradient or loss contains NaN or Inf."""

    exit_code = 4


class CheckpointError(BgCutError):
    """Checkpoint file cannot be read or written."""

    exit_code = 5
    code: str = "checkpoint_error"


class MagicMismatchError(CheckpointError):
    """Checkpoint header magic is not ``BGCT``."""

    code = "magic_mismatch"


class VersionMismatchError(CheckpointError):
    """Checkpoint format version is not supported."""

    code = "version_mismatch"


class TruncatedCheckpointError(CheckpointError):
    """Checkpoint ended before all declared data was read."""

    code = "truncated"


class ChecksumMismatchError(CheckpointError):
    """Trailing CRC32 does not match the file contents."""

    code = "checksum_mismatch"


class StaleFeatureError(BgCutError):
    """Background global feature was computed with a different backbone."""

    exit_code = 6


class MissingBackgroundError(BgCutError):
    """Attenuation needs background samples but none were provided."""

    exit_code = 6


class PruneError(BgCutError):
    """Pruning could not proceed; ``report`` holds the steps completed so far."""

    exit_code = 7

    def __init__(self, message: str, report: Optional[Any] = None) -> None:
        super().__init__(message)
        self.report = report


class DivergenceError(BgCutError):
    """Training loss became non-finite."""

    exit_code = 8

    def __init__(self, message: str, diagnostics: Optional[dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DatasetError(BgCutError):
    """Dataset generation or loading failed."""

    exit_code = 9

    def __init__(self, message: str, path: Optional[str] = None) -> None:
        super().__init__(f"{message}: {path}" if path else message)
        self.path = path


class EvaluationError(BgCutError):
    """Evaluation inputs are inconsistent (dimension mismatch, empty band)."""

    exit_code = 10
