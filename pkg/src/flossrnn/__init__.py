"""Recurrent-network training laboratory: Lyapunov-exponent measurement,
differentiable exponent regularization, BPTT task training, and
condition-number analysis of long Jacobian products."""

__version__ = "0.1.0"

from . import (  # noqa: F401
    autodiff,
    conditioning,
    experiments,
    flossing,
    linalg,
    lyapunov,
    models,
    optim,
    tasks,
    train,
)
