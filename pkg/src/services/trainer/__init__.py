"""
Training service

Fits the generative causal model on a bundle's seen-class training split and
writes the checkpoint together with the per-epoch training log.
"""

from .module import Trainer, train_model

__all__ = ["Trainer", "train_model"]
