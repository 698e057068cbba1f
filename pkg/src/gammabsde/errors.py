"""Exception types shared across the package."""


class GammaBsdeError(Exception):
    """Base class for all package errors."""


class ParseError(GammaBsdeError):
    """Malformed input file or expression.

    For expression sources, ``line`` and ``column`` locate the offending
    token (1-based).
    """

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class GeometryError(GammaBsdeError):
    """Degenerate or self-intersecting polygon loop."""


class ExteriorPointError(GammaBsdeError):
    """A query point lies outside the closed domain."""


class ParameterRangeError(GammaBsdeError):
    """A curve parameter falls outside [0, 1]."""


class ConvergenceError(GammaBsdeError):
    """An iterative solver hit its iteration cap.

    Carries the best iterate found so far in ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class StepTooLargeError(GammaBsdeError):
    """A transport substep is too large for unambiguous reflection."""


class CapacityError(GammaBsdeError):
    """Requested lattice exceeds the configured node budget."""


class SliceOrderError(GammaBsdeError):
    """A lattice query referenced slices in an invalid order."""


class LatticeMismatchError(GammaBsdeError):
    """A scheme result and a lattice do not belong together."""


class ContractionFailure(GammaBsdeError):
    """Picard iteration stopped contracting.

    ``ratios`` holds the consecutive-gap ratios observed before aborting.
    """

    def __init__(self, message, ratios=None):
        super().__init__(message)
        self.ratios = list(ratios) if ratios is not None else []


class EvalError(GammaBsdeError):
    """Runtime failure while evaluating a generator expression."""
