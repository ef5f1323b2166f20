"""Closed-form global minima and posterior-collapse analysis for linear
latent-variable models, verified against an in-package gradient-descent
oracle."""

from .closed_form import (
    GlobalMinimum,
    Hyperparams,
    global_minimum,
    min_factorization_value,
    min_loss_value,
    optimal_factors,
    optimal_sigma,
    prior_sigma_factors,
    reduce_to_factorization,
)
from .collapse import CollapseReport, beta_sweep, hessian_origin_test, predict
from .data import Dataset, SyntheticSpec, center, generate, load, save
from .decoder_variance import (
    DecVarSolution,
    minimize_profile,
    profile_loss,
    solve_decoder_variance,
)
from .spectrum import DataSpectrum, compute_spectrum, effective_counts
from .trainer import (
    ModelParams,
    TrainConfig,
    TrainResult,
    eval_grad,
    eval_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CollapseReport",
    "DataSpectrum",
    "Dataset",
    "DecVarSolution",
    "GlobalMinimum",
    "Hyperparams",
    "ModelParams",
    "SyntheticSpec",
    "TrainConfig",
    "TrainResult",
    "beta_sweep",
    "center",
    "compute_spectrum",
    "effective_counts",
    "eval_grad",
    "eval_loss",
    "generate",
    "global_minimum",
    "hessian_origin_test",
    "load",
    "min_factorization_value",
    "min_loss_value",
    "minimize_profile",
    "optimal_factors",
    "optimal_sigma",
    "predict",
    "prior_sigma_factors",
    "profile_loss",
    "reduce_to_factorization",
    "save",
    "solve_decoder_variance",
    "train",
]
