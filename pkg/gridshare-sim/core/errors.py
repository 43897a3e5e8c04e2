"""
Error Types

Exception hierarchy shared by the network, prosumer, welfare, pricing and
harness layers.
"""
from typing import Any, Dict, Optional


class GridshareError(Exception):
    """Base class for every error raised by the simulator."""

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        """Initialize error.

        Args:
            message: Human readable description
            context: Optional key/value context (scenario name, regime, ...)
        """
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = dict(context or {})

    def with_context(self, **context: Any) -> "GridshareError":
        """Attach extra context and return the same error for re-raising."""
        self.context.update(context)
        return self

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{key}={value}" for key, value in self.context.items())
        return f"{self.message} [{details}]"


class TopologyError(GridshareError):
    """Feeder graph is not a tree rooted at the slack bus."""


class DimensionError(GridshareError):
    """Vector length does not match the number of buses or devices."""


class PowerFlowDiverged(GridshareError):
    """Backward/forward sweep did not reach the tolerance."""


class DomainError(GridshareError):
    """Argument outside the domain of a model function."""


class EnvelopeInfeasible(GridshareError):
    """Operating envelope cannot be met within the device bounds."""


class Infeasible(GridshareError):
    """Voltage-constrained welfare program has no feasible point."""


class SolverDiverged(GridshareError):
    """Dual iteration did not converge.

    The ``residuals`` attribute carries the last residual report.
    """

    def __init__(self, message: str, residuals: Optional[Dict[str, float]] = None,
                 context: Optional[Dict[str, Any]] = None):
        super().__init__(message, context)
        self.residuals: Dict[str, float] = dict(residuals or {})


class RootBracketError(GridshareError):
    """Monotone price equation has no sign change in the search bracket."""


class EquilibriumViolation(GridshareError):
    """Decentralized best responses do not reproduce the central optimum."""

    def __init__(self, message: str, worst_prosumer: Optional[int] = None,
                 deviation: float = 0.0, context: Optional[Dict[str, Any]] = None):
        super().__init__(message, context)
        self.worst_prosumer = worst_prosumer
        self.deviation = deviation


class SettlementMismatch(GridshareError):
    """Settlement breaks budget neutrality or payment uniformity."""


class ConfigError(GridshareError):
    """Scenario, feeder, prosumer or settings file failed validation."""

    def __init__(self, message: str, field: Optional[str] = None,
                 context: Optional[Dict[str, Any]] = None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message, context)
        self.field = field
