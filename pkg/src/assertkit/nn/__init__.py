"""Minimal reverse-mode autodiff engine and layer library."""
from . import functional
from .layers import BatchNorm2d, Conv2d, Linear, Module, Parameter
from .optim import Adam, AdamState, OptimizerConfig, adam_step, noam_lr
from .tensor import GraphError, Tensor, concatenate, is_grad_enabled, no_grad

__all__ = [
    "Adam", "AdamState", "BatchNorm2d", "Conv2d", "GraphError", "Linear", "Module",
    "OptimizerConfig", "Parameter", "Tensor", "adam_step", "concatenate", "functional",
    "is_grad_enabled", "no_grad", "noam_lr",
]
