import os

import numpy as np
import pytest
import torch

from src.gcm.data import SynthWorldConfig, generate_synthetic_world
from src.gcm.model import ModelConfig, build_model


@pytest.fixture(autouse=True)
def setup_test_env():
    """Setup test environment variables"""
    os.environ["ENVIRONMENT"] = "testing"
    os.environ["LOG_LEVEL"] = "WARNING"
    yield


@pytest.fixture
def tiny_model_config():
    """Small MLP model config used by the fast unit tests"""
    return ModelConfig(feature_dim=8, attr_dim=3, z_dim=3, hidden_dim=16)


@pytest.fixture
def tiny_model(tiny_model_config):
    return build_model(tiny_model_config, seed=0)


@pytest.fixture
def double_model():
    """float64 model with dims <= 8 for finite-difference checks"""
    cfg = ModelConfig(feature_dim=6, attr_dim=3, z_dim=2, hidden_dim=8)
    return build_model(cfg, seed=1).double()


@pytest.fixture(scope="session")
def small_world():
    """3 seen + 2 unseen classes, dense attributes, linear generator"""
    cfg = SynthWorldConfig(
        num_seen=3,
        num_unseen=2,
        attr_dim=3,
        z_dim=3,
        feature_dim=8,
        samples_per_class=20,
        seed=0,
    )
    return generate_synthetic_world(cfg)


@pytest.fixture(scope="session")
def onehot_world():
    """3 seen + 2 unseen classes with one-hot class attributes"""
    cfg = SynthWorldConfig(
        num_seen=3,
        num_unseen=2,
        z_dim=2,
        feature_dim=8,
        samples_per_class=20,
        attribute_kind="onehot",
        seed=0,
    )
    return generate_synthetic_world(cfg)


@pytest.fixture(scope="session")
def desk_world():
    """6 seen + 4 unseen classes, attr_dim = z_dim = 4, feature_dim = 16, 200 per class"""
    return generate_synthetic_world(SynthWorldConfig(seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def torch_seed():
    torch.manual_seed(0)
    yield
