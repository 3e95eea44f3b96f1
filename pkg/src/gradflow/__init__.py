"""Gradient flow versus gradient descent on deep networks: exact Hessians,
curvature bounds, trajectory tools and step-size certificates."""

from .backend import BACKEND
from .core_linear import DataMoments, PerturbationSetting, WeightSetting
from .errors import (
    BoundaryError,
    ConstructionError,
    ConvergenceWarning,
    DegenerateDataError,
    DivergenceError,
    DomainError,
    GradflowError,
    IntegrationError,
    ParseError,
    PreconditionError,
    RankError,
    ShapeError,
    SizeError,
)
from .flow_engine import Trajectory, gd_run, gf_integrate, trajectory_distance
from .harness import package_version

__version__ = package_version()

__all__ = [
    "BACKEND",
    "BoundaryError",
    "ConstructionError",
    "ConvergenceWarning",
    "DataMoments",
    "DegenerateDataError",
    "DivergenceError",
    "DomainError",
    "GradflowError",
    "IntegrationError",
    "ParseError",
    "PerturbationSetting",
    "PreconditionError",
    "RankError",
    "ShapeError",
    "SizeError",
    "Trajectory",
    "WeightSetting",
    "gd_run",
    "gf_integrate",
    "trajectory_distance",
]
