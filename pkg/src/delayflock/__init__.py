"""Delayed Cucker-Smale flocking with normalized communication weights."""
from ._kernels import BACKEND_NAME
from .diagnostics import (
    FlockingCertificate,
    characteristic_roots,
    check_flocking_condition,
    classify_behavior,
    fit_decay_rate,
    lyapunov,
    solve_decay_rate,
    spatial_diameter,
    velocity_diameter,
    verify_hull_contraction,
)
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DomainError,
    FlockError,
    IntegrationBlowUp,
    OutOfRangeError,
    PartialResultWarning,
    PositivityError,
    UnsupportedConfigurationError,
)
from .influence import InfluenceFunction, QuadratureConfig, eval_psi, tail_integral, validate_influence
from .integrator import IntegratorConfig, Trajectory, integrate, step_euler, step_rk4
from .meanfield import EmpiricalMeasure, MeasureHistory, meanfield_force, wasserstein1
from .particles import InitialHistory, SystemState, communication_weights, rhs
from .scenarios import ScenarioConfig, builtin, run_scenario, sweep

__version__ = "0.1.0"

__all__ = [
    "FlockingCertificate",
    "characteristic_roots",
    "check_flocking_condition",
    "classify_behavior",
    "fit_decay_rate",
    "lyapunov",
    "solve_decay_rate",
    "spatial_diameter",
    "velocity_diameter",
    "verify_hull_contraction",
    "ConfigurationError",
    "ConvergenceError",
    "DomainError",
    "FlockError",
    "IntegrationBlowUp",
    "OutOfRangeError",
    "PartialResultWarning",
    "PositivityError",
    "UnsupportedConfigurationError",
    "BACKEND_NAME",
    "InfluenceFunction",
    "QuadratureConfig",
    "eval_psi",
    "tail_integral",
    "validate_influence",
    "IntegratorConfig",
    "Trajectory",
    "integrate",
    "step_euler",
    "step_rk4",
    "EmpiricalMeasure",
    "MeasureHistory",
    "meanfield_force",
    "wasserstein1",
    "InitialHistory",
    "SystemState",
    "communication_weights",
    "rhs",
    "ScenarioConfig",
    "builtin",
    "run_scenario",
    "sweep",
]
