"""
Counterfactual service

Computes the counterfactual of every test sample towards every class and
writes the per-target distances.
"""

from .module import Counterfact

__all__ = ["Counterfact"]
