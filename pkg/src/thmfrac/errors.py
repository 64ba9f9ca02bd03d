"""Exception types shared across the package."""

from __future__ import annotations


class ThmFracError(Exception):
    """Base class for all package-specific errors."""


class GeometryError(ThmFracError):
    """Invalid fracture geometry (crossing segments, points outside the domain)."""


class ParseError(ThmFracError):
    """Malformed input file; carries a line number when available."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(ThmFracError):
    """A constructed object violates one of its structural invariants."""


class DomainError(ThmFracError):
    """Fluid state (p, T) outside the admissible box of the equation of state."""


class DegenerateCellError(ThmFracError):
    """Cell geometry unusable for the flux construction (flat or inverted)."""


class SingularMatrixError(ThmFracError):
    """Direct factorization hit a zero pivot."""


class SingularTemperatureError(ThmFracError):
    """A non-positive temperature appeared where 1/T is needed."""


class MaxIterationsError(ThmFracError):
    """Iterative solver exhausted its iteration budget."""


class NonConvergence(ThmFracError):
    """A nonlinear solve failed; carries the iteration count and final residual."""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class StepFailure(ThmFracError):
    """A time step failed even after all time-step reductions."""


class EstimateViolation(ThmFracError):
    """The discrete energy estimate slack fell below its tolerance."""

    def __init__(self, message: str, breakdown: dict | None = None):
        super().__init__(message)
        self.breakdown = breakdown or {}
