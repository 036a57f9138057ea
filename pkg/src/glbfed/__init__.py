"""Simulation, exact solution and fluid limit of a federation of green micro-datacenters."""
from .analysis import CostReport, costs, eta, federation_inequality, modulated_bs_star, modulated_costs, variability
from .exact import build, erlang_marginals, expected_bs_frac, stationary
from .fluid import FixedPoint, FluidTrajectory, Regime, critical_load, fixed_point, integrate
from .model import (
    FederationParams,
    FluidState,
    GlbfedError,
    ModulatedParams,
    SystemState,
    modulator_weights,
    rho,
    s_star,
    validate,
)
from .simulator import SimConfig, StationaryEstimate, estimate_stationary, step, step_modulated, trace

__version__ = "0.1.0"
