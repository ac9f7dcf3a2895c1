"""Spectral and dynamical toolkit for periodic KPP reaction-diffusion systems."""

from .model import ModelSpec, load_model, model_from_dict, validate_assumptions
from .floquet import eigenvalue, principal_eigenvalue
from .speeds import critical_speed, fg_speed, lambda_max, lambda_prime
from .cauchy import classify_regime, simulate

__version__ = "0.1.0"

__all__ = [
    "ModelSpec",
    "load_model",
    "model_from_dict",
    "validate_assumptions",
    "eigenvalue",
    "principal_eigenvalue",
    "critical_speed",
    "fg_speed",
    "lambda_max",
    "lambda_prime",
    "classify_regime",
    "simulate",
]
