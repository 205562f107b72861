"""Exception hierarchy and process exit codes."""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ASSUMPTION = 3
EXIT_NUMERICAL = 4


class NvHedgeError(Exception):
    """Base class for all package errors."""

    exit_code = EXIT_NUMERICAL


class ValidationError(NvHedgeError, ValueError):
    """Rejected input: bad parameter, malformed file, empty sample."""

    exit_code = EXIT_VALIDATION


class DegenerateInputError(ValidationError):
    """Input is formally valid but carries no usable signal (e.g. a constant series)."""


class KappaHorizonError(ValidationError):
    """kappa * horizon >= pi/4; the hedging closed forms are not defined."""


class AssumptionViolationError(NvHedgeError):
    """No interior profit-maximizing solution with positive profit exists."""

    exit_code = EXIT_ASSUMPTION


class InternalConsistencyError(NvHedgeError):
    """A computed quantity violated a bound it must satisfy by construction."""


class NotApplicableError(NvHedgeError):
    """The requested quantity is undefined in the current parameter regime."""

    exit_code = EXIT_VALIDATION


class NumericalError(NvHedgeError):
    """A search or quadrature failed to produce a usable result."""
