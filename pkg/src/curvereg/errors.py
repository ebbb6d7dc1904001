"""Exception taxonomy shared by every curvereg module.

Two families matter for the CLI exit-code contract: ``DataError`` (exit 2,
bad or inconsistent inputs) and ``NumericalError`` (exit 3, a computation
that could not be carried out). The class name doubles as the stable
machine-readable error name echoed in JSON output.
"""


class CurveRegError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 2

    @property
    def name(self) -> str:
        return type(self).__name__


class DataError(CurveRegError):
    """Input files or values are missing, malformed, or inconsistent."""

    exit_code = 2


class NumericalError(CurveRegError):
    """A numerical procedure failed (singular system, no convergence, ...)."""

    exit_code = 3


# --- volume I/O and geometry ------------------------------------------------

class MissingFile(DataError):
    pass


class HeaderParse(DataError):
    pass


class SizeMismatch(DataError):
    pass


class IoFailure(DataError):
    pass


class MissingChannel(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


class GridMismatch(DataError):
    pass


class EmptyGrid(DataError):
    pass


# --- key curves ---------------------------------------------------------------

class InsufficientPoints(DataError):
    pass


class NoOverlap(DataError):
    pass


class NoSharedCurves(DataError):
    pass


class DegenerateSystem(NumericalError):
    pass


# --- transforms ----------------------------------------------------------------

class ControlMismatch(DataError):
    pass


class DegenerateControls(NumericalError):
    pass


class SingularTransform(NumericalError):
    pass


class InverseNonConvergent(NumericalError):
    pass


# --- features / registration ----------------------------------------------------

class ChannelMismatch(DataError):
    pass


class LocationMismatch(DataError):
    pass


class OptimizerBudgetExceeded(NumericalError):
    pass
