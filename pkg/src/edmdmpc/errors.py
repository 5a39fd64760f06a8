"""Exception hierarchy shared by all modules."""


class EdmdMpcError(Exception):
    """Base class for every error raised by this package."""


class InvalidDimensionError(EdmdMpcError, ValueError):
    pass


class OutOfDomainError(EdmdMpcError, ValueError):
    pass


class ScenarioError(EdmdMpcError, ValueError):
    """Scenario document does not match the schema."""


class GridMismatchError(EdmdMpcError, ValueError):
    pass


class ModeMismatchError(EdmdMpcError, ValueError):
    pass


class NumericalError(EdmdMpcError, ArithmeticError):
    """Failures of the numerics themselves (CLI exit code 2)."""


class SingularSystemError(NumericalError):
    pass


class DegenerateStateError(NumericalError):
    pass


class LineSearchError(NumericalError):
    """Armijo backtracking exhausted.

    ``report`` carries the best feasible iterate reached before the failure.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class UsageError(EdmdMpcError, ValueError):
    """Bad request from the caller (unknown format, missing file kind...)."""
