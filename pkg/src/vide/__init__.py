"""Volterra integro-differential control systems: successive approximations
in weighted norms, residual-functional diagnostics and control sensitivities."""

__version__ = "0.1.0"

from .config import ProblemConfig, load_config, load_problem, preset
from .grid import DerivCoords, TimeGrid, bielecki_norm, cumtrapz, l2_norm, norm_ac02
from .picard import SolverConfig, SolveReport, apply_T, choose_k, picard_solve, verify_contraction
from .problem import ProblemInstance, apply_Fuv, apply_Fx, residual_F
from .sensitivity import Perturbation, fd_directional, sensitivity_solve, validate_sensitivity
from .variational import (
    check_condition,
    coercivity_coefficients,
    coercivity_probe,
    descent_solve,
    phi,
    phi_gradient,
)

__all__ = [
    "DerivCoords", "Perturbation", "ProblemConfig", "ProblemInstance", "SolveReport",
    "SolverConfig", "TimeGrid", "apply_Fuv", "apply_Fx", "apply_T", "bielecki_norm",
    "check_condition", "choose_k", "coercivity_coefficients", "coercivity_probe",
    "cumtrapz", "descent_solve", "fd_directional", "l2_norm", "load_config",
    "load_problem", "norm_ac02", "phi", "phi_gradient", "picard_solve", "preset",
    "residual_F", "sensitivity_solve", "validate_sensitivity", "verify_contraction",
]
