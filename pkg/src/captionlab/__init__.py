"""Desk-scale image captioning laboratory.

Two caption generators (soft-attention LSTM and transformer decoder) built on
a small, fully gradient-checked autodiff core, with corpus caption metrics
and a hyperparameter-sweep harness.
"""

from .tensor import Rng, Tensor

__version__ = "0.1.0"

__all__ = ["Rng", "Tensor", "__version__"]
