"""Exception hierarchy.

Validation problems subclass ``ValueError``; numerical breakdowns subclass
``ArithmeticError``. The CLI maps the former to exit code 2 and the latter
to exit code 3.
"""


class FbmStmError(Exception):
    """Base class for all library errors."""


class DomainError(FbmStmError, ValueError):
    """An argument lies outside the domain of the operation."""


class CapExceeded(DomainError):
    """A size cap (Cholesky dimension, enumeration depth) was exceeded."""


class RangeExceeded(DomainError):
    """Parameters fall outside the supported evaluation envelope."""


class PoleError(DomainError):
    """Evaluation at a pole, e.g. Kummer's function with b in {0, -1, ...}."""


class InsufficientData(FbmStmError, ValueError):
    """Too few usable points to fit a stability verdict."""


class ConfigError(FbmStmError, ValueError):
    """Invalid run configuration. ``key`` names the offending ``section.key``."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class NumericalFailure(FbmStmError, ArithmeticError):
    """Base class for numerical breakdowns."""


class CirculantEmbeddingFailure(NumericalFailure):
    pass


class QuadratureFailure(NumericalFailure):
    pass


class DegenerateDenominator(NumericalFailure):
    pass


class ImplicitSolveFailure(NumericalFailure):
    pass


class EnsembleError(NumericalFailure):
    """A single path failed; the whole ensemble is aborted."""

    def __init__(self, stream_id, cause):
        self.stream_id = stream_id
        self.cause = cause
        super().__init__(f"path with stream_id={stream_id} failed: {cause}")


class NumericalOverflowWarning(RuntimeWarning):
    """A closed-form value overflowed and was saturated to +/-inf."""
