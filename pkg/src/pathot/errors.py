"""Exception hierarchy shared by the solvers and the command-line driver."""


class PathOTError(Exception):
    """Base class for all library errors."""


class InvalidArgument(PathOTError, ValueError):
    pass


class InfeasibleError(PathOTError):
    """Marginals cannot be coupled (total masses differ)."""


class DivergenceError(PathOTError):
    """Picard iteration for a boundary value problem failed to converge."""

    def __init__(self, message, last_change=float("nan"), report=None):
        super().__init__(message)
        self.last_change = last_change
        self.report = report


class ConvergenceError(PathOTError):
    """Outer fixed-point loop exhausted its iteration budget."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class SingularityError(PathOTError):
    """Unsmoothed Coulomb kernel evaluated at coincident points."""


class UnsupportedError(PathOTError):
    pass


class NonMapLikeError(PathOTError):
    """A coupling row splits its mass over more than one target."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)
