"""Exception types raised across the package."""


class SwiptBenchError(Exception):
    """Base class for all package errors."""


class ValidationError(SwiptBenchError, ValueError):
    """A configuration value is out of its allowed range."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ParseError(SwiptBenchError, ValueError):
    """Malformed config text."""

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class DimensionMismatch(SwiptBenchError, ValueError):
    pass


class NonFiniteAction(SwiptBenchError, ValueError):
    pass


class InfeasibleAction(SwiptBenchError, ValueError):
    pass


class NotPSD(SwiptBenchError, ValueError):
    pass


class NotSymmetric(SwiptBenchError, ValueError):
    pass


class SingularFisher(SwiptBenchError, ArithmeticError):
    pass


class SingularSystem(SwiptBenchError, ArithmeticError):
    pass


class EmptySeries(SwiptBenchError, ValueError):
    pass
