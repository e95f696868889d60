"""
Exception hierarchy for wpflow
Every error also derives from the closest builtin so callers may catch either
"""

from typing import Any, List, Optional


class WPFlowError(Exception):
    """Base class for all wpflow errors"""


class DomainError(WPFlowError, ValueError):
    """Point lies outside the chart x_floor <= x <= x_max"""


class DegeneratePlaneError(WPFlowError, ValueError):
    """Two tangent vectors do not span a plane"""


class PreconditionError(WPFlowError, ValueError):
    """An operation was called with inputs that violate its precondition"""


class StepUnderflowError(WPFlowError, ArithmeticError):
    """Adaptive step fell below the minimum allowed step"""

    def __init__(self, message: str, last_state: Optional[Any] = None, time: float = 0.0):
        super().__init__(message)
        self.last_state = last_state
        self.time = time


class OracleError(WPFlowError, ValueError):
    """The quadrature oracle cannot represent the requested motion"""


class FitWindowError(WPFlowError, ValueError):
    """Not enough usable depth bins for a drift fit"""


class InsufficientDecadesError(WPFlowError, ValueError):
    """A scaling fit was requested over too few parameter values or decades"""


class NonPositiveValueError(WPFlowError, ValueError):
    """Log-log fitting needs strictly positive parameters and values"""


class RegionOverlapError(WPFlowError, ValueError):
    """Observable support reaches into the near-boundary region"""


class StepResolutionError(WPFlowError, ValueError):
    """Finite-difference step cannot resolve the observable's features"""


class TrajectoryFailureError(WPFlowError, RuntimeError):
    """Too many trajectories of an ensemble failed"""


class NoEscapeError(WPFlowError, RuntimeError):
    """No trajectory of an escape ensemble reached the threshold"""


class ConfigError(WPFlowError, ValueError):
    """Configuration could not be parsed or validated"""

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        return base + "\n" + "\n".join(f"  - {d}" for d in self.diagnostics)
