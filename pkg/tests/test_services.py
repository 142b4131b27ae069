import csv
import json

import pytest

from src.core.engine import GCMEngine
from src.core.run_config import RunConfig
from src.gcm.checkpoint import load_checkpoint, load_tensors
from src.gcm.data import load_bundle, load_oracle

SMALL = dict(
    num_seen=3,
    num_unseen=2,
    samples_per_class=20,
    attr_dim=3,
    feature_dim=8,
    hidden_dim=16,
    epochs=2,
    batch_size=16,
    anneal_epochs=1,
    classifier_epochs=5,
    grid_size=50,
    num_pairs=50,
)

SMALL_OSR = dict(SMALL, mode="osr", attr_dim=None, z_dim=2, feature_dim=12)


@pytest.fixture(scope="module")
def engine():
    engine = GCMEngine()
    engine.initialize()
    yield engine
    engine.shutdown()


def _run(engine, service, **values):
    task = values.pop("task", None)
    tune_tau = values.pop("tune_tau", False)
    payload = {"config": RunConfig(**values)}
    if task:
        payload["task"] = task
        payload["tune_tau"] = tune_tau
    return engine.execute_service(service, payload)


@pytest.fixture(scope="module")
def zsl_run(engine, tmp_path_factory):
    """Synthetic world plus a briefly trained checkpoint"""
    root = tmp_path_factory.mktemp("zsl")
    bundle = root / "world.ds"
    checkpoint = root / "model.ckpt"
    assert _run(engine, "synth", out=str(bundle), **SMALL).success
    result = _run(engine, "trainer", bundle=str(bundle), out=str(checkpoint), **SMALL)
    assert result.success, result.error
    return root, bundle, checkpoint


@pytest.fixture(scope="module")
def osr_run(engine, tmp_path_factory):
    root = tmp_path_factory.mktemp("osr")
    bundle = root / "world.ds"
    checkpoint = root / "model.ckpt"
    assert _run(engine, "synth", out=str(bundle), **SMALL_OSR).success
    result = _run(engine, "trainer", bundle=str(bundle), out=str(checkpoint), **SMALL_OSR)
    assert result.success, result.error
    return root, bundle, checkpoint


class TestSynthService:
    """Tests for the synth service"""

    def test_writes_bundle_and_sidecar(self, zsl_run):
        _, bundle, _ = zsl_run
        loaded = load_bundle(bundle)
        world = load_oracle(f"{bundle}.oracle")
        assert loaded.num_samples == 100
        assert world.labels.size == 100

    def test_same_seed_same_bytes(self, engine, tmp_path):
        first, second = tmp_path / "a.ds", tmp_path / "b.ds"
        _run(engine, "synth", out=str(first), **SMALL)
        _run(engine, "synth", out=str(second), **SMALL)
        assert first.read_bytes() == second.read_bytes()

    def test_reports_injectivity(self, engine, tmp_path):
        result = _run(engine, "synth", out=str(tmp_path / "w.ds"), **SMALL)
        assert result.data["injectivity"]["passed"]

    def test_out_is_required(self, engine):
        result = _run(engine, "synth", **SMALL)
        assert not result.success
        assert result.exit_code == 1
        assert result.error.startswith("out")


class TestTrainerService:
    """Tests for the trainer service"""

    def test_checkpoint_metadata_and_log(self, zsl_run):
        root, _, checkpoint = zsl_run
        _, metadata = load_checkpoint(checkpoint)
        assert metadata["seed"] == 0
        assert metadata["mode"] == "zsl"
        assert metadata["seen_class_ids"] == [0, 1, 2]
        with open(root / "model.log.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:2] == ["epoch", "loss_z"]
        assert len(rows) == 3

    def test_dimension_mismatch_is_invalid(self, engine, zsl_run, tmp_path):
        _, bundle, _ = zsl_run
        values = dict(SMALL, feature_dim=9)
        result = _run(engine, "trainer", bundle=str(bundle), out=str(tmp_path / "m.ckpt"), **values)
        assert result.exit_code == 1
        assert result.error.startswith("feature_dim")

    def test_osr_needs_onehot_bundle(self, engine, zsl_run, tmp_path):
        _, bundle, _ = zsl_run
        values = dict(SMALL, mode="osr", attr_dim=None, attribute_kind="onehot")
        result = _run(engine, "trainer", bundle=str(bundle), out=str(tmp_path / "m.ckpt"), **values)
        assert result.exit_code == 1
        assert "attribute_kind" in result.error

    def test_missing_bundle_file_is_a_failure(self, engine, tmp_path):
        result = _run(
            engine, "trainer", bundle=str(tmp_path / "absent.ds"), out=str(tmp_path / "m.ckpt"), **SMALL
        )
        assert result.exit_code == 2
        assert result.error.startswith("FileNotFoundError")


class TestEvaluatorService:
    """Tests for eval-zsl, eval-osr and sweep-suc"""

    def test_zsl_report(self, engine, zsl_run):
        root, bundle, checkpoint = zsl_run
        out = root / "eval_zsl.json"
        result = _run(
            engine, "evaluator", task="zsl",
            bundle=str(bundle), checkpoint=str(checkpoint), out=str(out), **SMALL,
        )
        assert result.success, result.error
        report = json.loads(out.read_text())
        assert report["mode"] == "zsl"
        assert report["stage2"] == "built-in joint linear classifier"
        assert 0.0 <= report["U"] <= 1.0 and 0.0 <= report["S"] <= 1.0
        assert report["suc_curve"][0]["omega"] == "-Infinity"
        assert (root / "eval_zsl.predictions.csv").exists()
        assert (root / "eval_zsl.suc.csv").exists()
        assert result.data["report"]["config_hash"] == RunConfig(**SMALL).config_hash()

    def test_zsl_is_reproducible(self, engine, zsl_run):
        root, bundle, checkpoint = zsl_run
        texts = []
        for name in ("a.json", "b.json"):
            _run(
                engine, "evaluator", task="zsl",
                bundle=str(bundle), checkpoint=str(checkpoint), out=str(root / name), **SMALL,
            )
            texts.append((root / name).read_text())
        assert texts[0] == texts[1]

    def test_suc_curve_only(self, engine, zsl_run):
        root, bundle, checkpoint = zsl_run
        result = _run(
            engine, "evaluator", task="suc",
            bundle=str(bundle), checkpoint=str(checkpoint), output_dir=str(root), **SMALL,
        )
        assert result.success, result.error
        with open(root / "suc.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["omega", "U", "S"]
        assert rows[1][0] == "-inf"

    def test_osr_report(self, engine, osr_run):
        root, bundle, checkpoint = osr_run
        out = root / "eval_osr.json"
        result = _run(
            engine, "evaluator", task="osr", tune_tau=True,
            bundle=str(bundle), checkpoint=str(checkpoint), out=str(out), **SMALL_OSR,
        )
        assert result.success, result.error
        report = json.loads(out.read_text())
        assert report["mode"] == "osr"
        assert 0.0 <= report["f1_macro"] <= 1.0
        assert len(report["openness_f1"]) == 2
        assert report["per_split"][0]["tau"] == report["tau"]
        assert (root / "eval_osr.openness.csv").exists()

    def test_osr_rejects_dense_bundle(self, engine, zsl_run, osr_run):
        _, bundle, _ = zsl_run
        _, _, checkpoint = osr_run
        values = dict(SMALL, mode="osr", attr_dim=None, attribute_kind="onehot")
        result = _run(engine, "evaluator", task="osr", bundle=str(bundle), checkpoint=str(checkpoint), **values)
        assert result.exit_code == 1

    def test_unknown_task(self, engine):
        result = _run(engine, "evaluator", task="xyz", **SMALL)
        assert result.exit_code == 1
        assert result.error.startswith("task")


class TestCounterfactService:
    """Tests for the counterfact service"""

    def test_distance_table_and_dump(self, engine, zsl_run, tmp_path):
        _, bundle, checkpoint = zsl_run
        result = _run(
            engine, "counterfact",
            bundle=str(bundle), checkpoint=str(checkpoint), output_dir=str(tmp_path), **SMALL,
        )
        assert result.success, result.error
        with open(tmp_path / "counterfactuals.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["sample_id", "target_class", "distance"]
        num_test = len(load_bundle(bundle).split.test_idx)
        assert len(rows) - 1 == num_test * 5
        header, arrays = load_tensors(tmp_path / "counterfactuals.gcmt")
        assert header["kind"] == "counterfactuals"
        assert arrays["sample_ids"].size == num_test


class TestFaithfulnessService:
    """Tests for the faithfulness service"""

    def test_report(self, engine, zsl_run, tmp_path):
        _, bundle, checkpoint = zsl_run
        out = tmp_path / "faithfulness.json"
        result = _run(
            engine, "faithfulness",
            bundle=str(bundle), checkpoint=str(checkpoint), out=str(out), **SMALL,
        )
        assert result.success, result.error
        report = json.loads(out.read_text())
        assert report["grid_size"] == 50
        assert report["injectivity"]["passed"]
        assert report["mean_manifold_distance_cf"] >= 0

    def test_missing_oracle_is_a_failure(self, engine, zsl_run, tmp_path):
        _, bundle, checkpoint = zsl_run
        result = _run(
            engine, "faithfulness", bundle=str(bundle), checkpoint=str(checkpoint),
            oracle=str(tmp_path / "none.oracle"), out=str(tmp_path / "f.json"), **SMALL,
        )
        assert not result.success


class TestAblationService:
    """Tests for the ablation service"""

    def test_both_variants_per_seed(self, engine, zsl_run, tmp_path):
        _, bundle, _ = zsl_run
        values = dict(SMALL, epochs=1, ablation_seeds=[0, 1])
        result = _run(engine, "ablation", bundle=str(bundle), output_dir=str(tmp_path), **values)
        assert result.success, result.error
        report = json.loads((tmp_path / "ablation.json").read_text())
        assert report["seeds"] == [0, 1]
        assert [(r["seed"], r["variant"]) for r in report["rows"]] == [
            (0, "full"), (0, "entangled"), (1, "full"), (1, "entangled"),
        ]
        assert set(report["mean"]) == {"full", "entangled"}
        assert all(r["residual"] is not None for r in report["rows"])
        assert (tmp_path / "ablation.csv").exists()

    def test_empty_seed_list(self, engine, zsl_run):
        _, bundle, _ = zsl_run
        result = _run(engine, "ablation", bundle=str(bundle), **dict(SMALL, ablation_seeds=[]))
        assert result.exit_code == 1
