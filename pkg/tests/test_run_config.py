import pytest

from src.core.errors import ConfigValidationError, ShapeError
from src.core.run_config import RunConfig, load_run_config, parse_config_text, validate_config


class TestParseConfigText:
    """Tests for the flat key = value reader"""

    def test_comments_and_blank_lines_are_skipped(self):
        values, errors = parse_config_text("# header\n\nbeta = 4.0  # inline\nmode=osr\n")
        assert errors == []
        assert values == {"beta": "4.0", "mode": "osr"}

    def test_dashes_in_keys_become_underscores(self):
        values, _ = parse_config_text("learning-rate = 0.01")
        assert values == {"learning_rate": "0.01"}

    def test_line_without_equals_is_reported(self):
        _, errors = parse_config_text("beta 6")
        assert errors and errors[0].startswith("line 1")

    def test_duplicate_key_is_reported_by_name(self):
        _, errors = parse_config_text("beta = 1\nbeta = 2")
        assert errors and errors[0].startswith("beta")


class TestValidateConfig:
    """Tests for validate_config"""

    def test_empty_config_is_all_defaults(self):
        config, errors = validate_config("")
        assert errors == []
        assert config == RunConfig()
        assert config.tau == 0.9
        assert config.K == 10

    def test_negative_beta_is_named(self):
        config, errors = validate_config("beta = -1")
        assert config is None
        assert any(e.startswith("beta") for e in errors)

    def test_osr_with_dense_attributes_is_rejected(self):
        config, errors = validate_config("mode = osr\nattribute_kind = dense")
        assert config is None
        assert any(e.startswith("attribute_kind") for e in errors)

    def test_unknown_key_is_rejected(self):
        config, errors = validate_config("gamma = 3")
        assert config is None
        assert any(e.startswith("gamma") for e in errors)

    def test_overrides_take_precedence(self):
        config, errors = validate_config("beta = 2.0\nepochs = 5", {"beta": "3.5"})
        assert errors == []
        assert config.beta == 3.5
        assert config.epochs == 5

    def test_every_violation_is_reported(self):
        _, errors = validate_config("beta = -1\nepochs = 0\nmode = maybe")
        keys = {e.split(":")[0] for e in errors}
        assert {"beta", "epochs", "mode"} <= keys

    def test_list_values(self):
        config, errors = validate_config(
            "backbone = ladder\nladder_layers = 4:3:2, 8:3:2\nimage_shape = 1,4,4\n"
            "omega_grid = -1, 0, 1.5\nablation_seeds = 3,4"
        )
        assert errors == []
        assert config.ladder_layers == [(4, 3, 2), (8, 3, 2)]
        assert config.image_shape == (1, 4, 4)
        assert config.omega_grid == [-1.0, 0.0, 1.5]
        assert config.ablation_seeds == [3, 4]

    def test_group_learning_rates(self):
        config, errors = validate_config("group_learning_rates = encoder:1e-4, discriminator:1e-3")
        assert errors == []
        assert config.group_learning_rates == {"encoder": 1e-4, "discriminator": 1e-3}
        training = config.training_settings()
        assert training.group_lr("encoder") == 1e-4
        assert training.group_lr("decoder") == config.learning_rate

    def test_bad_group_learning_rate(self):
        assert validate_config("group_learning_rates = encoder")[1][0].startswith("group_learning_rates")
        assert validate_config("group_learning_rates = critic:0.1")[1][0].startswith("group_learning_rates")

    def test_bad_ladder_item_names_the_key(self):
        _, errors = validate_config("ladder_layers = 4:3")
        assert errors and errors[0].startswith("ladder_layers")

    def test_ladder_backbone_needs_layers(self):
        _, errors = validate_config("backbone = ladder")
        assert any(e.startswith("ladder_layers") for e in errors)

    def test_negatives_per_anchor_accepts_all_or_int(self):
        assert validate_config("negatives_per_anchor = all")[0].negatives_per_anchor == "all"
        assert validate_config("negatives_per_anchor = 5")[0].negatives_per_anchor == 5

    def test_none_resets_optional_path(self):
        config, errors = validate_config("bundle = none")
        assert errors == []
        assert config.bundle is None


class TestRunConfigProjections:
    """Tests for the derived model / training / synth settings"""

    def test_rho_defaults_by_mode(self):
        assert RunConfig(mode="zsl").effective_rho == 1.0
        assert RunConfig(mode="osr").effective_rho == 0.0
        assert RunConfig(mode="osr", rho=0.5).effective_rho == 0.5

    def test_osr_defaults_to_onehot_worlds(self):
        synth = RunConfig(mode="osr").synth_settings()
        assert synth.attribute_kind == "onehot"
        assert synth.attr_dim == synth.num_classes

    def test_training_settings_accept_overrides(self):
        cfg = RunConfig(seed=3).training_settings(nu=0.0, rho=0.0)
        assert cfg.nu == 0.0 and cfg.rho == 0.0 and cfg.seed == 3

    def test_model_settings_check_bundle_dims(self):
        with pytest.raises(ShapeError):
            RunConfig(feature_dim=10).model_settings(16, 4)
        cfg = RunConfig().model_settings(16, 4)
        assert cfg.z_dim == 4

    def test_sampling_z_mode(self):
        mode = RunConfig(z_mode="sample", z_samples=5).z_mode_settings()
        assert mode.kind == "sample" and mode.n == 5

    def test_config_hash_ignores_paths(self):
        a = RunConfig(out="a.json", bundle="x.ds")
        b = RunConfig(out="b.json")
        assert a.config_hash() == b.config_hash()
        assert len(a.config_hash()) == 16
        assert RunConfig(beta=2.0).config_hash() != a.config_hash()


class TestLoadRunConfig:
    """Tests for load_run_config"""

    def test_reads_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs = 3\nseed = 9\n")
        config = load_run_config(path)
        assert config.epochs == 3 and config.seed == 9

    def test_raises_with_error_list(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("beta = -2\n")
        with pytest.raises(ConfigValidationError) as exc:
            load_run_config(path)
        assert exc.value.errors[0].startswith("beta")
