"""1D convolutional networks for partial time series classification.

Classifies series fragments that vary in both length and absolute start
timestamp: learnable temporal encoding, receptive-field-aware multi-scale
pooling, and masked statistics over the valid (non-padded) region, on top of
a small numpy reverse-mode autodiff core.
"""

__version__ = "0.1.0"

from .tensor import Tensor, get_default_dtype, set_default_dtype  # noqa: F401
