import json

import pytest

from src.core.engine import GCMEngine
from src.core.run_config import RunConfig

pytestmark = [pytest.mark.slow, pytest.mark.acceptance]


def _run(engine, service, **values):
    task = values.pop("task", None)
    payload = {"config": RunConfig(**values)}
    if task:
        payload["task"] = task
    result = engine.execute_service(service, payload)
    assert result.success, result.error
    return result


@pytest.fixture(scope="module")
def engine():
    engine = GCMEngine()
    engine.initialize()
    yield engine
    engine.shutdown()


@pytest.fixture(scope="module")
def desk(engine, tmp_path_factory):
    """Default desk-scale world and a fully trained model"""
    root = tmp_path_factory.mktemp("desk")
    bundle = root / "world.ds"
    checkpoint = root / "model.ckpt"
    _run(engine, "synth", out=str(bundle))
    _run(engine, "trainer", bundle=str(bundle), out=str(checkpoint))
    return root, bundle, checkpoint


class TestDeskWorld:
    """Behavioural checks on the 6 + 4 class linear world"""

    def test_consistency_rule_holds_on_held_out_seen_samples(self, engine, desk):
        root, bundle, checkpoint = desk
        out = root / "zsl.json"
        _run(engine, "evaluator", task="zsl", bundle=str(bundle), checkpoint=str(checkpoint), out=str(out))
        assert json.loads(out.read_text())["consistency_rate"] >= 0.9

    def test_counterfactuals_stay_closer_to_the_manifold_than_prior_samples(self, engine, desk):
        root, bundle, checkpoint = desk
        out = root / "faithfulness.json"
        _run(engine, "faithfulness", bundle=str(bundle), checkpoint=str(checkpoint), out=str(out))
        report = json.loads(out.read_text())
        assert report["mean_manifold_distance_cf"] <= 0.5 * report["mean_manifold_distance_prior"]

    def test_reports_are_byte_identical(self, engine, desk):
        root, bundle, checkpoint = desk
        texts = []
        for name in ("first.json", "second.json"):
            _run(engine, "evaluator", task="zsl", bundle=str(bundle), checkpoint=str(checkpoint),
                 out=str(root / name))
            texts.append((root / name).read_bytes())
        assert texts[0] == texts[1]

    def test_full_model_beats_the_entangled_ablation(self, engine, desk):
        root, bundle, _ = desk
        _run(engine, "ablation", bundle=str(bundle), output_dir=str(root))
        report = json.loads((root / "ablation.json").read_text())
        full, entangled = report["mean"]["full"], report["mean"]["entangled"]
        assert report["full_lower_cvb"] is True
        assert report["full_higher_h"] is True
        assert full["residual"] <= 0.5 * entangled["residual"]
