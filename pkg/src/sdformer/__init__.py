"""SDformer: sparse-to-dense transformer for depth completion, on a
self-contained numpy autodiff core."""

from .errors import ConfigError, NumericError
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "no_grad", "ConfigError", "NumericError", "__version__"]
