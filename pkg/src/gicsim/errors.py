"""Exception hierarchy shared across the package.

CLI exit-code mapping: InvalidInputError (and subclasses) exit with 2,
DivergedError and IdentificationFailedError with 3.
"""


class GicError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GicError):
    """Caller supplied inputs violating a documented precondition."""


class ParseError(InvalidInputError):
    """A file could not be parsed; carries location context when known."""

    def __init__(self, message, path=None, line=None, offset=None):
        loc = ""
        if path is not None:
            loc += f" [{path}"
            if line is not None:
                loc += f":{line}"
            if offset is not None:
                loc += f"+{offset}"
            loc += "]"
        super().__init__(message + loc)
        self.path = path
        self.line = line
        self.offset = offset


class SingularParameterError(InvalidInputError):
    """Material parameters at a singular point (e.g. Poisson ratio 0.5)."""


class InvalidStateError(GicError):
    """Simulation state violates a physical invariant."""


class InvertedElementError(InvalidStateError):
    """Deformation gradient with non-positive determinant."""


class DivergedError(GicError):
    """Simulation produced non-finite state; carries the failing step index."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (substep {step})"
        super().__init__(message)
        self.step = step


class DivergedProbeError(DivergedError):
    """A finite-difference probe produced a non-finite loss."""

    def __init__(self, message, coordinate=None):
        if coordinate is not None:
            message = f"{message} (coordinate {coordinate})"
        super().__init__(message)
        self.coordinate = coordinate


class IdentificationFailedError(GicError):
    """Every identification rollout diverged; carries diagnostics text."""
