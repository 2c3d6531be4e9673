"""Exception hierarchy shared by the library and the command line."""

from __future__ import annotations


class ErgmLassoError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class UsageError(ErgmLassoError, ValueError):
    """Invalid argument passed to a library function (bad dyad, bad node)."""

    exit_code = 2


class InputError(ErgmLassoError):
    """Malformed input file. Carries the offending path and line when known."""

    exit_code = 2

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class SpecError(ErgmLassoError):
    """Model spec is inconsistent with itself or with the attributes."""

    exit_code = 2


class NumericalError(ErgmLassoError):
    """Non-finite quantity met during sampling or estimation."""

    exit_code = 4


class DegeneracyError(NumericalError):
    """Parameter vector ran past the divergence guard."""


class DegenerateMLEError(NumericalError):
    """The observed statistics sit on the boundary of the attainable set."""


class CollinearityError(NumericalError):
    """Statistic covariance is singular; names the offending terms."""

    def __init__(self, message: str, terms: tuple[str, ...] = ()):
        self.terms = terms
        super().__init__(message)


class CapacityError(ErgmLassoError):
    """Exact enumeration requested for a network that is too large."""

    exit_code = 4


class NonConvergenceError(ErgmLassoError):
    """Stochastic optimisation ran out of iterations."""

    exit_code = 3

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)
