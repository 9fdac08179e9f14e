"""Exception and warning types shared across the package."""


class FibhamError(Exception):
    """Base class for computation errors raised by this package."""

    exit_code = 3


class PrecisionExhausted(FibhamError):
    """A sign decision could not be certified at the maximum working precision."""

    def __init__(self, message, precision=None):
        super().__init__(message)
        self.precision = precision


class NoSignChange(FibhamError):
    """A root bracket does not carry a certified sign change."""


class StructureViolation(FibhamError):
    """The band hierarchy does not have the shape required by the type A/B nesting rule."""


class BoundaryAmbiguity(FibhamError):
    """The rotation argument of the potential sits on a breakpoint."""


class OrbitEscaped(FibhamError):
    """A trace-map orbit crossed the magnitude cap.

    ``orbit`` holds the points computed before the cap was crossed and
    ``step`` the index of the first point above the cap.
    """

    def __init__(self, message, step, orbit):
        super().__init__(message)
        self.step = step
        self.orbit = orbit


class FitError(FibhamError):
    """A regression could not be carried out or its diagnostics failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateFit(FitError):
    """Too few usable points for a least-squares fit."""


class FitWindowError(FitError):
    """The log-log relation is visibly non-linear over the chosen window."""


class TruncationWarning(UserWarning):
    """Probability mass reached the boundary sites of the finite lattice."""


class NoiseFloorWarning(UserWarning):
    """A moment is dominated by floating-point noise in the far tail."""
