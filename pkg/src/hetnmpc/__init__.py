"""Interior-point NMPC with block-sparse KKT matrices, MINRES and hardware cost models."""

from .errors import (ConfigError, DimensionError, HetNmpcError, InfeasibleIterateError, MinresBreakdown,
                     ModelDomainError, ScheduleError)

__all__ = ["ConfigError", "DimensionError", "HetNmpcError", "InfeasibleIterateError", "MinresBreakdown",
           "ModelDomainError", "ScheduleError"]
__version__ = "0.1.0"
