"""Exception types shared across the toolkit."""


class QopError(Exception):
    """Base class for all toolkit errors."""


class InvalidInput(QopError):
    """Malformed or inconsistent input (shape, hermiticity, normalization...)."""


class InvalidSubsystem(QopError):
    """Subsystem index out of range or otherwise not addressable."""


class UnsupportedDimension(QopError):
    """Requested construction does not exist at this dimension."""


class DegenerateEffect(QopError):
    """Effect with vanishing Hilbert-Schmidt norm cannot be imposed."""


class InvalidMeasurementKind(QopError):
    """Operation not defined for this measurement kind."""


class TooLargeScenario(QopError):
    """Deterministic-strategy enumeration would exceed the size guard."""


class UnsupportedOutcomes(QopError):
    """Operation requires a two-outcome scenario."""


class NotViolatedAtAnyEfficiency(QopError):
    """No detector efficiency in (0, 1] produces a violation for this data."""


class DegenerateIterate(QopError):
    """Iterate lost the structure the algorithm needs (e.g. zero trace)."""


class NotConverged(QopError):
    """Iteration hit its cap before reaching tolerance.

    Carries the partial result so callers can inspect the trajectory.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result
