"""
Evaluation service

Runs two-stage ZSL or OSR inference on a checkpoint and bundle and writes the
EvalReport JSON, per-sample predictions and the SUC or openness curves.
"""

from .module import Evaluator
from .pipeline import EvalOutcome, evaluate_osr, evaluate_zsl

__all__ = ["Evaluator", "EvalOutcome", "evaluate_osr", "evaluate_zsl"]
