"""Cross-domain sketch/photo embeddings with triplet convnets.

Numerics are float32 throughout (including accumulations); the engine is
CPU-only and sized for desk-scale experiments.
"""

__version__ = "0.1.0"

from .autograd import Tensor

__all__ = ["Tensor", "__version__"]
