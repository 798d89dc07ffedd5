"""Tri-modal (question / image region / fact) sequential co-attention VQA,
built on a small numpy reverse-mode autodiff core."""

from .errors import VQAError

__version__ = "0.1.0"
__all__ = ["VQAError", "__version__"]
