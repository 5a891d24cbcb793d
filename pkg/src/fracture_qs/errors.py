"""Exception types shared across the package."""


class FractureError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FractureError, ValueError):
    """Malformed numerical input (non-finite entries, unknown ids, ...)."""


class InvalidMeshError(FractureError, ValueError):
    """Mesh construction arguments are inconsistent."""


class InvalidGeometryError(InvalidMeshError):
    """A notch or boundary spec is not representable on the grid."""


class OutOfRangeError(FractureError, ValueError):
    """A time outside the load program's horizon was requested."""


class BudgetExceededError(FractureError):
    """Too many candidate bonds for exact enumeration; use the altmin backend."""


class NonconvergenceError(FractureError):
    """Iterative solve hit its iteration cap.

    Carries the last iterate and residual so callers can checkpoint.
    """

    def __init__(self, message, state=None, residual=None, step_index=None):
        super().__init__(message)
        self.state = state
        self.residual = residual
        self.step_index = step_index


class InvariantViolationError(FractureError):
    """A verified run property (irreversibility, ledger arithmetic, ...) failed."""


class ConfigError(FractureError, ValueError):
    """Config validation failure; `key` holds the offending key path."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class TrajectoryFormatError(FractureError, ValueError):
    """Malformed trajectory/ledger file; `line` is the 1-based line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SnapshotVersionError(FractureError):
    """Snapshot file carries an unsupported format version."""


class OutputLockedError(FractureError):
    """Another run holds the output directory lock."""
