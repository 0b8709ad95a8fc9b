from . import functional
from .functional import LengthError, ShapeError
from .gradcheck import grad_check
from .params import ParamRegistry
from .tensor import NonFiniteError, Tensor, as_tensor

__all__ = [
    "functional",
    "grad_check",
    "LengthError",
    "NonFiniteError",
    "ParamRegistry",
    "ShapeError",
    "Tensor",
    "as_tensor",
]
