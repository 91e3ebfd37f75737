"""Desk-scale lab for contrastive joint-training semi-supervised learning
with an ensemble of projector heads."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
