"""
Faithfulness service

Measures how far a trained model's counterfactuals fall from the true data
manifold of a synthetic world, using the oracle sidecar.
"""

from .module import Faithfulness

__all__ = ["Faithfulness"]
