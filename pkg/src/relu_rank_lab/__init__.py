"""Gradient-flow simulation and rank diagnostics for small bias-free ReLU networks."""

from .flow import FlowConfig, FlowResult, Integrator, StopReason, init_spherical, run_flow
from .gradients import LossKind, grad, loss, margin
from .network import Dataset, Params, forward, forward_batch

__all__ = [
    "Dataset",
    "FlowConfig",
    "FlowResult",
    "Integrator",
    "LossKind",
    "Params",
    "StopReason",
    "forward",
    "forward_batch",
    "grad",
    "init_spherical",
    "loss",
    "margin",
    "run_flow",
]

__version__ = "0.1.0"
