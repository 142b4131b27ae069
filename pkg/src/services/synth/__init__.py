"""
Synthetic world service

Generates a seeded synthetic GCM world and writes the dataset bundle plus
its oracle sidecar.
"""

from .module import Synth

__all__ = ["Synth"]
