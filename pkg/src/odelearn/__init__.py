"""Dynamics discovery through unrolled implicit Runge-Kutta training,
with inverse-modified-equation oracles for verifying what was learned."""

from .estimator import ODENetRegressor
from .fields import FuncField, LinearField, VectorField, as_field
from .imde import (
    linear_imde_implicit_euler,
    linear_imde_series,
    linear_imde_solve,
    nonlinear_imde_terms,
    numeric_imde,
)
from .metrics import field_error, trajectory_error
from .models import AffineModel, MlpModel, init_model, load_model
from .steppers import (
    Exact,
    FixedPoint,
    NewtonRaphson,
    StepOperator,
    compose,
    mode_from_config,
    odesolve,
    step_exact,
    step_explicit,
    step_fixed_point,
    step_newton,
)
from .systems import (
    EpisodeDataset,
    builtin,
    generate,
    load_dataset,
    save_dataset,
    split_episodes,
)
from .tableaux import BUILTIN_TABLEAUX, ButcherTableau, get_tableau
from .training import (
    AdaptiveConfig,
    LossConfig,
    TrainReport,
    adam_step,
    delta_gap,
    lr_schedule,
    train,
    unrolled_loss,
)

__version__ = "0.1.0"

__all__ = [
    "ODENetRegressor",
    "VectorField", "FuncField", "LinearField", "as_field",
    "ButcherTableau", "BUILTIN_TABLEAUX", "get_tableau",
    "StepOperator", "FixedPoint", "NewtonRaphson", "Exact",
    "step_fixed_point", "step_newton", "step_exact", "step_explicit",
    "compose", "odesolve", "mode_from_config",
    "AffineModel", "MlpModel", "init_model", "load_model",
    "linear_imde_implicit_euler", "linear_imde_series", "linear_imde_solve",
    "nonlinear_imde_terms", "numeric_imde",
    "EpisodeDataset", "builtin", "generate", "split_episodes",
    "save_dataset", "load_dataset",
    "LossConfig", "AdaptiveConfig", "TrainReport",
    "train", "unrolled_loss", "delta_gap", "adam_step", "lr_schedule",
    "field_error", "trajectory_error",
    "__version__",
]
