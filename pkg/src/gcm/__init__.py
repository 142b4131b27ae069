"""
Generative causal model toolkit

Counterfactual-faithful training of a Z -> X <- Y generative model, two-stage
seen/unseen inference for zero-shot and open-set recognition, and a synthetic
oracle world for checking faithfulness.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .counterfactual import CounterfactualGenerator, CounterfactualRequest, ZMode
from .data import (
    DatasetBundle,
    OracleWorld,
    SplitSpec,
    SynthWorldConfig,
    generate_synthetic_world,
    load_bundle,
    load_oracle,
    make_split,
    save_bundle,
    save_oracle,
)
from .metrics import EvalReport
from .model import GenerativeCausalModel, ModelConfig, build_model
from .training import TrainingConfig, fit

__all__ = [
    "CounterfactualGenerator",
    "CounterfactualRequest",
    "DatasetBundle",
    "EvalReport",
    "GenerativeCausalModel",
    "ModelConfig",
    "OracleWorld",
    "SplitSpec",
    "SynthWorldConfig",
    "TrainingConfig",
    "ZMode",
    "build_model",
    "fit",
    "generate_synthetic_world",
    "load_bundle",
    "load_checkpoint",
    "load_oracle",
    "make_split",
    "save_bundle",
    "save_checkpoint",
    "save_oracle",
]
