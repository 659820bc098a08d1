from .tensor import Tensor, no_grad
from . import functional
from .optim import Adam

__all__ = ["Tensor", "no_grad", "functional", "Adam"]
