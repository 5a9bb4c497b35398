"""Dual cross-attention fusion classifier with MC-dropout uncertainty."""

__version__ = "0.1.0"

from .tensor import GradTape, Tensor  # noqa: F401
