"""Minimal differentiable computation: parameter store, MLP, losses, optimizer."""

from softood.numerics.functional import cross_entropy, entropy, l2_normalize, softmax
from softood.numerics.gradcheck import finite_diff_check
from softood.numerics.mlp import MlpSpec, init_mlp_params, mlp_backward, mlp_forward
from softood.numerics.optim import OptimConfig, optimizer_step
from softood.numerics.params import ParamStore

__all__ = [
    "MlpSpec",
    "OptimConfig",
    "ParamStore",
    "cross_entropy",
    "entropy",
    "finite_diff_check",
    "init_mlp_params",
    "l2_normalize",
    "mlp_backward",
    "mlp_forward",
    "optimizer_step",
    "softmax",
]
