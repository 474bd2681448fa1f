from . import checkpoint, ops
from .gradcheck import GradCheckReport, NumericError, finite_diff_check
from .nn import LayerNorm, Linear, Module, Parameter
from .ops import surrogate_forward
from .tensor import (
    ContractError,
    ShapeError,
    Tensor,
    backward,
    get_dtype,
    no_grad,
    precision,
    set_precision,
)

__all__ = [
    "ContractError", "GradCheckReport", "LayerNorm", "Linear", "Module", "NumericError", "Parameter",
    "ShapeError", "Tensor", "backward", "checkpoint", "finite_diff_check", "get_dtype", "no_grad",
    "ops", "precision", "set_precision", "surrogate_forward",
]
