"""Continuous convolutional networks with coordinate-generated kernels."""

from .tensor import Tensor, backward, no_grad
from .errors import DimensionError, FormatError, TrainingDiverged, UsageError

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "DimensionError",
    "FormatError",
    "TrainingDiverged",
    "UsageError",
    "__version__",
]
