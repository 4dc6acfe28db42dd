"""Robust density control of large agent populations via an advection-diffusion model."""

__version__ = "0.1.0"

from .grid import BoundaryKind, Grid1D, Grid2D
from .fields import GridDensityEstimator, ReferenceDensity, estimate_density
from .control import ControlGains, DensityController, DisturbanceBound
from .poisson import solve_poisson, recover_flux
from .macro import MacroState, run_closed_loop_macro
from .micro import AgentPopulation, run_closed_loop_micro
from .harness import Scenario, load_scenario, run, sweep, exponential_bound_check

__all__ = [
    "AgentPopulation",
    "BoundaryKind",
    "ControlGains",
    "DensityController",
    "DisturbanceBound",
    "Grid1D",
    "Grid2D",
    "GridDensityEstimator",
    "MacroState",
    "ReferenceDensity",
    "Scenario",
    "estimate_density",
    "exponential_bound_check",
    "load_scenario",
    "recover_flux",
    "run",
    "run_closed_loop_macro",
    "run_closed_loop_micro",
    "solve_poisson",
    "sweep",
]
