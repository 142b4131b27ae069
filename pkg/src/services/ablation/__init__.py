"""
Ablation service

Trains the full model and the entangled (nu = rho = 0) variant on the same
world for several seeds and compares their seen/unseen balance.
"""

from .module import Ablation, AblationReport

__all__ = ["Ablation", "AblationReport"]
