"""Reverse-mode autodiff over numpy arrays."""

from . import ops
from .gradcheck import GradcheckReport, gradcheck, gradcheck_report, numerical_grad
from .optim import Adam
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    detect_anomaly,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    parameter,
    precision,
    set_default_dtype,
)

__all__ = [
    "Adam",
    "GradcheckReport",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "detect_anomaly",
    "get_default_dtype",
    "gradcheck",
    "gradcheck_report",
    "is_grad_enabled",
    "no_grad",
    "numerical_grad",
    "ops",
    "parameter",
    "precision",
    "set_default_dtype",
]
