"""Numeric core: reverse-mode differentiation, MLP backbone, optimizer, training loop."""

from genbench.core.mlp import MLPConfig, ParameterVector, ShapeError, init_params, mlp_forward, time_features
from genbench.core.optim import OptimizerState, adam_step
from genbench.core.training import Budget, TrainingDivergence, TrainResult, fit, loss_gradient

__all__ = [
    "Budget",
    "MLPConfig",
    "OptimizerState",
    "ParameterVector",
    "ShapeError",
    "TrainResult",
    "TrainingDivergence",
    "adam_step",
    "fit",
    "init_params",
    "loss_gradient",
    "mlp_forward",
    "time_features",
]
