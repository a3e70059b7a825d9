"""Exception and warning types shared across the package."""


class StableBatchError(Exception):
    """Base class for all package errors."""


class DomainError(StableBatchError, ValueError):
    """Argument lies outside the domain where a formula is defined."""


class StallError(StableBatchError, ArithmeticError):
    """The batch size is at or below the stall bound, so loss cannot decrease."""


class InsufficientData(StableBatchError, ValueError):
    pass


class FitDiverged(StableBatchError, RuntimeError):
    pass


class InsufficientOverlap(StableBatchError, ValueError):
    pass


class OrderingViolation(StableBatchError, ValueError):
    """Knot ordering s_min < s_1 < s_opt < s_2 does not hold."""


class LengthMismatch(StableBatchError, ValueError):
    pass


class NonPositiveBatch(StableBatchError, ValueError):
    pass


class MonotonicityViolation(StableBatchError, ValueError):
    pass


class InvalidConfig(StableBatchError, ValueError):
    pass


class MissingArtifacts(StableBatchError, FileNotFoundError):
    pass


class RunParseError(StableBatchError, ValueError):
    """A training-log file could not be parsed; carries the offending line."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class NonMonotoneWarning(UserWarning):
    pass
