"""Exception hierarchy shared across the toolkit."""


class CumlrError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(CumlrError, ValueError):
    """Invalid configuration or arguments."""


class ShapeError(CumlrError, ValueError):
    """Array dimensions do not line up."""


class DataError(CumlrError, ValueError):
    """Malformed or out-of-range data."""


class IdxFormatError(DataError):
    """IDX container could not be parsed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DivergenceError(CumlrError, ArithmeticError):
    """A non-finite value appeared during optimization."""


class DomainError(CumlrError, ValueError):
    """Argument outside the function's domain."""


class SingularShapeError(CumlrError, ValueError):
    """Schedule multipliers sum to zero, so the rate cannot be solved for."""


class MisuseError(CumlrError, ValueError):
    """Operation applied to an input it is not defined for."""


class InsufficientDataError(CumlrError, ValueError):
    """Too few points for the requested statistic."""


class NoConvergentRateError(CumlrError):
    """Every learning rate in a sweep diverged."""
