"""Ricci-harmonic flow on rotationally symmetric 3-spheres: flow, heat kernels, entropies and inequality checks."""

from .geometry import DomainError, Grid, MetricState, ScalarField, curvature
from .flow import BlowUpError, FlowConfig, FlowHistory, run
from .heat import HeatSolution, fundamental_solution, solve_conjugate, solve_forward
from .functionals import entropy_F, entropy_W, lambda0, monotonicity_trace

__all__ = [
    "BlowUpError",
    "DomainError",
    "FlowConfig",
    "FlowHistory",
    "Grid",
    "HeatSolution",
    "MetricState",
    "ScalarField",
    "curvature",
    "entropy_F",
    "entropy_W",
    "fundamental_solution",
    "lambda0",
    "monotonicity_trace",
    "run",
    "solve_conjugate",
    "solve_forward",
]
