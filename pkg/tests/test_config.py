import pytest

from als_seg.config import (
    ConfigError,
    ExperimentConfig,
    build_config,
    config_hash,
    effective_config_text,
    flatten,
    merge_config,
    parse_config_file,
    write_effective_config,
)


class TestFlattenBuildRoundTrip:
    def test_defaults_round_trip(self):
        cfg = ExperimentConfig()
        rebuilt = build_config(flatten(cfg))
        assert flatten(rebuilt) == flatten(cfg)

    def test_non_defaults_round_trip(self):
        cfg = ExperimentConfig(seed=99)
        cfg.selection.strategy = "margin"
        cfg.gan.crop_size = (20, 24)
        cfg.gan.poly_power = 0.9
        cfg.selection.learner.reinit_each_teach = True
        rebuilt = build_config(flatten(cfg))
        assert rebuilt.selection.strategy == "margin"
        assert rebuilt.gan.crop_size == (20, 24)
        assert rebuilt.gan.poly_power == 0.9
        assert rebuilt.selection.learner.reinit_each_teach is True

    def test_selection_seed_follows_root(self):
        cfg = build_config({**flatten(ExperimentConfig()), "seed": "123"})
        assert cfg.selection.seed == 123


class TestValidation:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            build_config({**flatten(ExperimentConfig()), "gan.bogus": "1"})

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            build_config({**flatten(ExperimentConfig()), "gan.tau": "not-a-float"})

    def test_domain_validation_propagates(self):
        with pytest.raises(ConfigError):
            build_config({**flatten(ExperimentConfig()), "gan.tau": "1.5"})
        with pytest.raises(ConfigError):
            build_config({**flatten(ExperimentConfig()), "selection.labeled_ratio": "0"})


class TestConfigFile:
    def test_parse_and_merge(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment line\n"
            "selection.alpha_init = 0.3\n"
            "gan.iterations=77\n"
            "\n",
            encoding="utf-8",
        )
        values = parse_config_file(path)
        assert values == {"selection.alpha_init": "0.3", "gan.iterations": "77"}
        cfg = merge_config(config_file=str(path))
        assert cfg.selection.alpha_init == 0.3
        assert cfg.gan.iterations == 77

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("no equals sign here\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            parse_config_file(path)


class TestPrecedence:
    def test_overrides_beat_preset_beat_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("selection.alpha_init=0.7\ngan.tau=0.4\n", encoding="utf-8")
        cfg = merge_config(config_file=str(path), preset="paper")
        # preset wins over the file
        assert cfg.selection.alpha_init == 0.1
        assert cfg.gan.tau == 0.6
        cfg = merge_config(
            config_file=str(path), preset="paper", overrides={"gan.tau": "0.55"}
        )
        assert cfg.gan.tau == 0.55

    def test_paper_preset_values(self):
        cfg = merge_config(preset="paper")
        assert cfg.selection.alpha_init == 0.1
        assert cfg.selection.beta_q == 0.5
        assert cfg.gan.tau == 0.6
        assert cfg.gan.lambda_fm == 0.1
        assert cfg.gan.lambda_st == 1.0

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            merge_config(preset="nope")


class TestHashAndEcho:
    def test_hash_stable_and_sensitive(self):
        a = ExperimentConfig()
        b = ExperimentConfig()
        assert config_hash(a) == config_hash(b)
        b.gan.tau = 0.61
        assert config_hash(a) != config_hash(b)

    def test_effective_config_echoed(self, tmp_path):
        cfg = ExperimentConfig(seed=5)
        out = write_effective_config(cfg, tmp_path)
        assert out.read_text() == effective_config_text(cfg)
        assert "seed=5" in out.read_text()

    def test_text_is_sorted_key_value(self):
        text = effective_config_text(ExperimentConfig())
        lines = [line for line in text.splitlines() if line]
        assert lines == sorted(lines)
        assert all("=" in line for line in lines)
