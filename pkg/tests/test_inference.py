import math

import numpy as np
import pytest
import torch

from src.core.errors import EmptyInputError, ShapeError
from src.gcm.counterfactual import CounterfactualEntry, CounterfactualSet
from src.gcm.inference import (
    JointClassifier,
    calibrated_probabilities,
    default_omega_grid,
    osr_binary,
    pooled_scores,
    suc_curve,
    train_joint_classifier,
    tune_tau,
    two_stage_osr,
    two_stage_zsl,
    validation_halves,
    zsl_binary,
)
from src.gcm.metrics import UNKNOWN, ausuc


def _classifier(seen=(0, 1, 2), unseen=(3, 4)):
    return JointClassifier(4, list(seen) + list(unseen), seen)


class TestZSLBinary:
    """Tests for the top-K pooled seen/unseen gate"""

    def test_tie_goes_to_unseen(self):
        probs = np.array([0.25, 0.25, 0.25, 0.25])
        mask = np.array([True, True, False, False])
        assert zsl_binary(probs, mask, K=1).label == "unseen"

    def test_seen_dominant(self):
        probs = np.array([0.7, 0.1, 0.1, 0.1])
        mask = np.array([True, True, False, False])
        decision = zsl_binary(probs, mask, K=1)
        assert decision.label == "seen"
        assert decision.score == pytest.approx(0.6)

    def test_k_is_clipped_to_the_smaller_side(self):
        probs = np.array([0.4, 0.3, 0.2, 0.1])
        mask = np.array([True, True, True, False])
        decision = zsl_binary(probs, mask, K=10)
        assert decision.detail["K"] == 1

    def test_malformed_probabilities(self):
        mask = np.array([True, False])
        with pytest.raises(ValueError):
            zsl_binary(np.array([0.9, 0.9]), mask)
        with pytest.raises(ShapeError):
            zsl_binary(np.array([0.5, 0.5, 0.0]), mask)

    def test_probabilities_outside_top_k_do_not_matter(self):
        mask = np.array([True, True, True, False, False, False])
        base = np.array([0.30, 0.20, 0.05, 0.25, 0.15, 0.05])
        moved = np.array([0.30, 0.20, 0.02, 0.25, 0.15, 0.08])
        first, second = zsl_binary(base, mask, K=2), zsl_binary(moved, mask, K=2)
        assert first.label == second.label
        assert first.score == pytest.approx(second.score)

    def test_pooled_scores_average_top_k(self):
        probs = np.array([[0.4, 0.2, 0.1, 0.3]])
        mask = np.array([True, True, True, False])
        s_k, u_k = pooled_scores(probs, mask, 1)
        assert s_k[0] == pytest.approx(0.4)
        assert u_k[0] == pytest.approx(0.3)


class TestCalibration:
    """Tests for calibrated_probabilities and the omega monotonicity"""

    def test_infinite_omega_zeroes_one_side(self):
        logits = np.array([[1.0, 2.0, 0.5]])
        mask = np.array([True, True, False])
        assert calibrated_probabilities(logits, mask, math.inf)[0, :2].sum() == 0.0
        assert calibrated_probabilities(logits, mask, -math.inf)[0, 2] == 0.0

    def test_rows_sum_to_one(self, rng):
        logits = rng.normal(size=(5, 6))
        mask = np.array([True] * 3 + [False] * 3)
        probs = calibrated_probabilities(logits, mask, 0.7)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

    def test_unseen_set_grows_with_omega(self, rng):
        clf = _classifier()
        logits = rng.normal(scale=2.0, size=(100, 5))
        previous = None
        for omega in np.linspace(-5, 5, 21):
            unseen = two_stage_zsl(logits, clf, K=2, omega_cal=omega).predicted_unseen
            if previous is not None:
                assert np.all(unseen[previous])
            previous = unseen


class TestTwoStageZSL:
    """Tests for two_stage_zsl"""

    def test_final_label_comes_from_chosen_side(self):
        clf = _classifier()
        logits = np.array([[5.0, 0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0, 6.0]])
        preds = two_stage_zsl(logits, clf, K=1)
        assert preds.predicted_unseen.tolist() == [False, True]
        assert preds.final.tolist() == [0, 4]

    def test_sentinels(self):
        clf = _classifier()
        logits = np.array([[5.0, 0.0, 0.0, 1.0, 0.0]])
        assert two_stage_zsl(logits, clf, K=1, omega_cal=math.inf).final.tolist() == [3]
        assert two_stage_zsl(logits, clf, K=1, omega_cal=-math.inf).final.tolist() == [0]

    def test_suc_curve_endpoints(self, rng):
        clf = _classifier()
        labels = np.array([0, 1, 2, 3, 4] * 4)
        logits = rng.normal(size=(labels.size, 5))
        curve = suc_curve(logits, clf, labels, [0, 1, 2], [3, 4], K=1)
        assert (curve[0].U, curve[-1].S) == (0.0, 0.0)
        assert 0.0 <= ausuc(curve) <= 1.0

    def test_default_grid_size(self, rng):
        logits = rng.normal(size=(30, 5))
        mask = np.array([True, True, True, False, False])
        grid = default_omega_grid(logits, mask)
        assert len(grid) == 41
        assert grid == sorted(grid)


class TestOSR:
    """Tests for the counterfactual-distance rejection rule"""

    def _set(self, distances):
        return CounterfactualSet(
            [CounterfactualEntry(t, 0, torch.zeros(2), d) for t, d in enumerate(distances)]
        )

    def test_boundary_is_seen(self):
        decision = osr_binary(torch.zeros(2), self._set([0.5, 0.9]), tau=0.5)
        assert decision.label == "seen"
        assert decision.score == 0.5

    def test_above_threshold_is_unseen(self):
        assert osr_binary(torch.zeros(2), self._set([0.6, 0.9]), tau=0.5).label == "unseen"

    def test_empty_set(self):
        with pytest.raises(EmptyInputError):
            osr_binary(torch.zeros(2), CounterfactualSet([]), tau=0.5)

    def test_two_stage_rejects_to_unknown(self):
        distances = np.array([[0.1, 0.8], [2.0, 3.0]])
        probs = np.array([[0.2, 0.8], [0.6, 0.4]])
        preds = two_stage_osr(distances, probs, [5, 7], tau=1.0)
        assert preds.final.tolist() == [7, UNKNOWN]
        np.testing.assert_allclose(preds.score, [0.1, 2.0])

    def test_unseen_count_never_grows_with_tau(self, rng):
        distances = rng.uniform(0.0, 2.0, size=(100, 4))
        probs = rng.dirichlet(np.ones(4), size=100)
        counts = [
            int(two_stage_osr(distances, probs, [0, 1, 2, 3], tau).predicted_unseen.sum())
            for tau in np.linspace(0.0, 2.0, 21)
        ]
        assert counts == sorted(counts, reverse=True)
        assert counts[0] > 0 and counts[-1] == 0

    def test_tune_tau_separates_clean_distances(self):
        d_min = np.array([0.1, 0.2, 0.15, 1.0, 1.2])
        seen_preds = np.array([0, 1, 0, 0, 1])
        labels = np.array([0, 1, 0, 9, 9])
        tau, f1 = tune_tau(d_min, seen_preds, labels, [0, 1])
        assert 0.2 <= tau < 1.0
        assert f1 == pytest.approx(1.0)

    def test_validation_halves_are_disjoint_and_stratified(self):
        labels = np.array([0] * 10 + [1] * 6)
        val, rest = validation_halves(range(16), labels, seed=3)
        assert not set(val) & set(rest)
        assert sorted(val + rest) == list(range(16))
        assert sum(labels[val] == 0) == 5 and sum(labels[val] == 1) == 3
        assert validation_halves(range(16), labels, seed=3) == (val, rest)


class TestJointClassifier:
    """Tests for train_joint_classifier"""

    def test_separable_data_is_fit_exactly(self):
        centers = np.array([[3.0, 0.0], [0.0, 3.0], [-3.0, 0.0], [0.0, -3.0]])
        gen = np.random.default_rng(0)
        seen_x = np.concatenate([c + 0.1 * gen.normal(size=(20, 2)) for c in centers[:2]])
        seen_y = np.repeat([0, 1], 20)
        cf_x = np.concatenate([c + 0.1 * gen.normal(size=(20, 2)) for c in centers[2:]])
        cf_y = np.repeat([2, 3], 20)
        clf = train_joint_classifier(seen_x, seen_y, cf_x, cf_y, [0, 1], [2, 3], epochs=300, lr=0.05, seed=0)
        x = torch.as_tensor(np.concatenate([seen_x, cf_x]), dtype=torch.float32)
        pred = np.asarray(clf.vocabulary)[clf.logits(x).argmax(axis=1)]
        assert np.array_equal(pred, np.concatenate([seen_y, cf_y]))
        assert clf.seen_mask.tolist() == [True, True, False, False]

    def test_missing_unseen_pool(self):
        with pytest.raises(EmptyInputError):
            train_joint_classifier(
                np.zeros((2, 2)), np.array([0, 1]), np.zeros((0, 2)), np.zeros(0), [0, 1], [2]
            )

    def test_same_seed_same_weights(self):
        x = np.random.default_rng(1).normal(size=(12, 3))
        y = np.array([0, 1, 2] * 4)
        a = train_joint_classifier(x[:8], y[:8] % 2, x[8:], np.full(4, 2), [0, 1], [2], epochs=3, seed=5)
        b = train_joint_classifier(x[:8], y[:8] % 2, x[8:], np.full(4, 2), [0, 1], [2], epochs=3, seed=5)
        assert torch.equal(a.fc.weight, b.fc.weight)
