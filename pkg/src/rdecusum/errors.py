"""Exception hierarchy shared across the package."""


class RdecusumError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(RdecusumError, ValueError):
    """An argument violates a documented precondition."""


class ContractViolationError(RdecusumError, RuntimeError):
    """The two-phase detector API was driven out of order."""


class EstimationUnstableError(RdecusumError, RuntimeError):
    """A Monte-Carlo estimate cannot be trusted (too much censoring or too few survivors)."""


class EstimationFailedError(RdecusumError, RuntimeError):
    """A Monte-Carlo estimator produced no usable trials at all."""


class ParseError(RdecusumError, ValueError):
    """A CSV input file is malformed; the message carries the line number."""


class ConfigError(RdecusumError, ValueError):
    """An experiment config file violates the schema; the message carries the key path."""
