"""Exception hierarchy shared across the package."""


class CesTradeError(Exception):
    """Base class for all package errors."""


class ScenarioError(CesTradeError, ValueError):
    """Invalid or inconsistent scenario input (config, CSV, parameters)."""


class InfeasibleError(CesTradeError):
    """The storage operator has no strategy satisfying the battery constraints."""


class ConvergenceError(CesTradeError):
    """An iterative solver hit its iteration cap."""
