import math

import pytest
import torch
from pydantic import ValidationError

from src.core.errors import ShapeError
from src.gcm.ladder import conv_output_size, ladder_shapes
from src.gcm.model import GaussianPosterior, ModelConfig, build_model


class TestModelConfig:
    """Tests for ModelConfig"""

    def test_z_dim_defaults_to_attr_dim(self):
        assert ModelConfig(feature_dim=8, attr_dim=5).latent_dim == 5

    def test_ladder_needs_layers_and_image(self):
        with pytest.raises(ValidationError):
            ModelConfig(feature_dim=16, attr_dim=2, backbone="ladder")
        with pytest.raises(ValidationError):
            ModelConfig(feature_dim=16, attr_dim=2, backbone="ladder", ladder_layers=[(4, 3, 2)])

    def test_image_must_flatten_to_feature_dim(self):
        with pytest.raises(ValidationError):
            ModelConfig(
                feature_dim=15, attr_dim=2, backbone="ladder",
                ladder_layers=[(4, 3, 2)], image_shape=(1, 4, 4),
            )


class TestGenerativeCausalModel:
    """Tests for the MLP model surface"""

    def test_batch_and_single_shapes(self, tiny_model):
        x = torch.rand(5, 8)
        post = tiny_model.encode(x)
        assert post.mean.shape == (5, 3)
        assert torch.all(post.stddev > 0)
        single = tiny_model.encode(x[0])
        assert single.mean.shape == (3,)
        y = torch.eye(3)[[0, 1, 2, 0, 1]]
        assert tiny_model.decode(post.mean, y).shape == (5, 8)
        assert tiny_model.decode(single.mean, y[0]).shape == (8,)

    def test_single_attribute_broadcasts_over_batch(self, tiny_model):
        z = torch.zeros(4, 3)
        out = tiny_model.decode(z, torch.tensor([1.0, 0.0, 0.0]))
        assert out.shape == (4, 8)

    def test_wrong_dimension(self, tiny_model):
        with pytest.raises(ShapeError):
            tiny_model.encode(torch.rand(2, 7))
        with pytest.raises(ShapeError):
            tiny_model.decode(torch.zeros(2, 3), torch.zeros(3, 3))

    def test_reparameterize_checks_noise(self, tiny_model):
        post = GaussianPosterior(torch.zeros(2, 3), torch.ones(2, 3))
        assert torch.equal(tiny_model.reparameterize(post, torch.ones(2, 3)), torch.ones(2, 3))
        with pytest.raises(ShapeError):
            tiny_model.reparameterize(post, torch.ones(2, 4))

    def test_posterior_shape_mismatch(self):
        with pytest.raises(ShapeError):
            GaussianPosterior(torch.zeros(2), torch.ones(3))

    def test_sigmoid_output_range(self, tiny_model):
        out = tiny_model.decode(10 * torch.randn(6, 3), torch.eye(3)[[0, 1, 2, 0, 1, 2]])
        assert torch.all((out >= 0) & (out <= 1))

    def test_identity_output(self):
        cfg = ModelConfig(feature_dim=4, attr_dim=2, output_activation="identity")
        model = build_model(cfg, seed=0)
        assert model.decode(torch.full((1, 2), 50.0), torch.ones(1, 2)).abs().max() > 1

    def test_feedback_changes_generation(self, tiny_model):
        z = torch.zeros(1, 3)
        y = torch.eye(3)[:1]
        with torch.no_grad():
            plain = tiny_model.decode(z, y)
            fed = tiny_model.decode(z, y, feedback_source=torch.rand(1, 8))
        assert not torch.allclose(plain, fed)

    def test_no_feedback_module(self):
        cfg = ModelConfig(feature_dim=4, attr_dim=2, use_feedback=False)
        model = build_model(cfg, seed=0)
        assert model.feedback is None
        assert model.parameter_groups()["feedback"] == []

    def test_known_class_probabilities(self, tiny_model):
        probs = tiny_model.known_class_probabilities(torch.rand(4, 8), [0, 2])
        assert probs.shape == (4, 2)
        assert torch.allclose(probs.sum(-1), torch.ones(4))

    def test_parameter_groups_cover_the_model(self, tiny_model):
        groups = tiny_model.parameter_groups()
        assert set(groups) == set(tiny_model.GROUPS)
        total = sum(len(v) for v in groups.values())
        assert total == len(list(tiny_model.parameters()))

    def test_same_seed_same_initialisation(self, tiny_model_config):
        a = build_model(tiny_model_config, seed=3)
        b = build_model(tiny_model_config, seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)


class TestZeroNetwork:
    """Closed-form outputs when every weight and bias is zero"""

    @pytest.fixture
    def zero_model(self, tiny_model):
        with torch.no_grad():
            for p in tiny_model.parameters():
                p.zero_()
        return tiny_model.eval()

    def test_encode(self, zero_model):
        post = zero_model.encode(torch.rand(4, 8))
        assert torch.equal(post.mean, torch.zeros(4, 3))
        torch.testing.assert_close(post.stddev, torch.full((4, 3), math.log(2.0)))

    def test_decode_is_half_under_sigmoid(self, zero_model):
        out = zero_model.decode(torch.randn(4, 3), torch.eye(3)[[0, 1, 2, 0]], feedback_source=torch.rand(4, 8))
        torch.testing.assert_close(out, torch.full((4, 8), 0.5))

    def test_regress_and_discriminate_are_zero(self, zero_model):
        y_hat, _ = zero_model.regress(torch.rand(4, 8))
        assert torch.equal(y_hat, torch.zeros(4, 3))
        assert torch.equal(zero_model.discriminate(torch.rand(4, 8), torch.eye(3)[[0, 1, 2, 0]]), torch.zeros(4))


class TestLadderBackbone:
    """Tests for the convolutional ladder backbone"""

    CFG = dict(
        feature_dim=64,
        attr_dim=3,
        z_dim=4,
        hidden_dim=16,
        backbone="ladder",
        ladder_layers=[(4, 3, 2), (8, 3, 2)],
        image_shape=(1, 8, 8),
    )

    def test_shapes(self):
        assert conv_output_size(8, 3, 2) == 4
        assert ladder_shapes((1, 8, 8), [(4, 3, 2), (8, 3, 2)]) == [(1, 8, 8), (4, 4, 4), (8, 2, 2)]

    def test_round_trip_shapes(self):
        model = build_model(ModelConfig(**self.CFG), seed=0)
        model.eval()
        x = torch.rand(3, 64)
        post = model.encode(x)
        assert post.mean.shape == (3, 4)
        out = model.decode(post.mean, torch.eye(3), feedback_source=x)
        assert out.shape == (3, 64)
        assert model.discriminate(x, torch.eye(3)).shape == (3,)

    def test_stochastic_levels_only_while_training(self):
        model = build_model(ModelConfig(**self.CFG), seed=0)
        z, y = torch.zeros(2, 4), torch.eye(3)[:2]
        model.eval()
        first = model.decode(z, y, generator=torch.Generator().manual_seed(0))
        second = model.decode(z, y, generator=torch.Generator().manual_seed(1))
        assert torch.equal(first, second)
