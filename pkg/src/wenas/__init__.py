"""wenas: weighted-ensemble architecture search for recurrent cells."""

__version__ = "0.1.0"

from ._kernels import backend as kernel_backend

__all__ = ["kernel_backend", "__version__"]
