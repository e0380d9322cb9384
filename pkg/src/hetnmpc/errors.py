"""Exception hierarchy shared by the solver modules."""


class HetNmpcError(Exception):
    """Base class for all package errors."""


class ModelDomainError(HetNmpcError, ValueError):
    """Raised when a model is evaluated outside its declared domain."""


class DimensionError(HetNmpcError, ValueError):
    """Raised when array dimensions do not agree with a declared layout."""


class InfeasibleIterateError(HetNmpcError):
    """Raised when an interior-point iterate is not strictly feasible."""


class MinresBreakdown(HetNmpcError):
    """Lanczos breakdown with a nonzero residual."""


class ScheduleError(HetNmpcError, ValueError):
    """Raised for invalid schedules (e.g. an order that is not a permutation)."""


class ConfigError(HetNmpcError, ValueError):
    """Invalid run configuration."""
