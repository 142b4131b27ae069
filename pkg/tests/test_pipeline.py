import numpy as np
import pytest

from src.core.errors import BundleValidationError
from src.core.run_config import RunConfig
from src.gcm.data import SynthWorldConfig, generate_synthetic_world
from src.gcm.model import ModelConfig, build_model
from src.services.evaluator import pipeline
from src.services.evaluator.pipeline import check_test_coverage, evaluate_osr, evaluate_zsl

FAST = RunConfig(classifier_epochs=2, classifier_batch_size=32)


@pytest.fixture
def pool_spy(monkeypatch):
    """Records the factual samples each counterfactual pool is conditioned on"""
    calls = []
    original = pipeline.counterfactual_pool

    def recording(generator, x, attributes, class_ids, z_mode):
        calls.append((x.detach().numpy().copy(), list(class_ids)))
        return original(generator, x, attributes, class_ids, z_mode)

    monkeypatch.setattr(pipeline, "counterfactual_pool", recording)
    return calls


def _world_without_seen_tests(attribute_kind):
    cfg = SynthWorldConfig(
        num_seen=3, num_unseen=2, attr_dim=3, z_dim=2, feature_dim=8,
        samples_per_class=10, train_fraction=1.0, attribute_kind=attribute_kind,
    )
    return generate_synthetic_world(cfg)[0]


class TestZSLPipeline:
    """Tests for evaluate_zsl"""

    def test_unseen_pool_is_conditioned_on_test_samples(self, small_world, tiny_model, pool_spy):
        bundle, _ = small_world
        evaluate_zsl(tiny_model, bundle, FAST)
        assert len(pool_spy) == 1
        pooled_x, class_ids = pool_spy[0]
        x_test, _ = bundle.test_arrays()
        np.testing.assert_allclose(pooled_x, x_test, rtol=1e-6)
        assert class_ids == bundle.unseen_ids

    def test_report_fields(self, small_world, tiny_model):
        bundle, _ = small_world
        report = evaluate_zsl(tiny_model, bundle, FAST).report
        assert report.K == 2
        assert 0.0 <= report.U <= 1.0 and 0.0 <= report.S <= 1.0

    def test_split_without_seen_test_samples_is_rejected(self, tiny_model):
        bundle = _world_without_seen_tests("dense")
        with pytest.raises(BundleValidationError, match=r"\[0, 1, 2\]"):
            evaluate_zsl(tiny_model, bundle, FAST)

    def test_report_lists_entangled_attribute_pairs(self, small_world, tiny_model):
        bundle, _ = small_world
        pairs = evaluate_zsl(tiny_model, bundle, FAST).report.attribute_entanglement
        # 3 attributes give 3 pairs
        assert len(pairs) == 3
        gaps = [p.gap for p in pairs]
        assert gaps == sorted(gaps, reverse=True)

    def test_entanglement_needs_two_unseen_classes(self):
        cfg = SynthWorldConfig(
            num_seen=3, num_unseen=1, attr_dim=3, z_dim=2, feature_dim=8, samples_per_class=10,
        )
        bundle = generate_synthetic_world(cfg)[0]
        assert pipeline._entanglement(bundle) == []


class TestOSRPipeline:
    """Tests for evaluate_osr"""

    def test_split_without_seen_test_samples_is_rejected(self):
        bundle = _world_without_seen_tests("onehot")
        model = build_model(ModelConfig(feature_dim=8, attr_dim=5, z_dim=2, hidden_dim=16), seed=0)
        with pytest.raises(BundleValidationError):
            evaluate_osr(model, bundle, RunConfig(mode="osr"))


class TestCheckTestCoverage:
    """Tests for check_test_coverage"""

    def test_all_classes_present(self):
        check_test_coverage(np.array([0, 1, 2, 2]), [0, 1, 2])

    def test_missing_classes_are_named(self):
        with pytest.raises(BundleValidationError, match=r"\[1, 3\]"):
            check_test_coverage(np.array([0, 2]), [0, 1, 2, 3])
