from semedit.nn.kernels import BACKEND
from semedit.nn.tensor import Tensor, no_grad

__all__ = ["BACKEND", "Tensor", "no_grad"]
