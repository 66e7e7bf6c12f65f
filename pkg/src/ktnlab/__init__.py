"""Cross-type transfer learning on heterogeneous graphs."""
from .kernels import BACKEND

__version__ = "0.1.0"
