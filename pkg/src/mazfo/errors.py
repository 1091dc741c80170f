"""Exception types raised across the package."""


class MazfoError(Exception):
    """Base class for all package errors."""


class DisconnectedGraph(MazfoError):
    pass


class NotContractive(MazfoError):
    pass


class DimensionMismatch(MazfoError, ValueError):
    pass


class InfeasibleInstance(MazfoError):
    pass


class NoConvergence(MazfoError):
    pass


class NonFiniteValue(MazfoError, ArithmeticError):
    pass


class BoundViolated(MazfoError):
    """Raised by the smoothing-gap check; ``witness`` holds the offending point."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class StaleBeyondBuffer(MazfoError):
    pass


class InvalidConstants(MazfoError, ValueError):
    pass


class NonFiniteIterate(MazfoError):
    """A trial produced a non-finite or runaway iterate."""

    def __init__(self, message, round_index=None, diagnostics=None):
        super().__init__(message)
        self.round_index = round_index
        self.diagnostics = diagnostics or {}
