"""Tests for runtime settings, model presets and layered experiment files."""

import pytest

from bonelift.config import (
    VARIANT_PRESETS,
    ExperimentConfig,
    ModelConfig,
    RuntimeSettings,
    TrainSchedule,
    load_config,
    parse_override,
)
from bonelift.errors import ConfigurationError

from .conftest import MICRO_TOPOLOGY, ROOT

CONFIGS = ROOT / "configs"


def test_runtime_settings_from_env(monkeypatch, tmp_path):
    """Test BONELIFT_* variables are picked up."""
    monkeypatch.setenv("BONELIFT_OUTPUT_ROOT", str(tmp_path))
    monkeypatch.setenv("BONELIFT_LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("BONELIFT_STAGE2_CHECKPOINT", str(tmp_path / "stage2"))
    settings = RuntimeSettings.from_env()
    assert settings.output_root == tmp_path
    assert settings.log_level == "DEBUG"
    assert settings.stage2_checkpoint == tmp_path / "stage2"
    assert settings.device == "cpu"


def test_runtime_settings_defaults(monkeypatch):
    for name in ("BONELIFT_STAGE1_CHECKPOINT", "BONELIFT_STAGE2_CHECKPOINT", "BONELIFT_DETERMINISTIC"):
        monkeypatch.delenv(name, raising=False)
    settings = RuntimeSettings.from_env()
    assert settings.stage2_checkpoint is None
    assert settings.deterministic is False


@pytest.mark.parametrize("variant", ["tiny", "large"])
def test_variant_presets(variant):
    """Test tiny is L=8, D=64 and large is L=12, D=128."""
    cfg = ModelConfig.for_variant(variant)
    assert (cfg.depth, cfg.dim) == (VARIANT_PRESETS[variant]["depth"], VARIANT_PRESETS[variant]["dim"])
    assert cfg.frames == 243 and cfg.num_joints == 17 and cfg.num_categories == 6


def test_variant_mismatch():
    """Test a named variant cannot silently change its size."""
    with pytest.raises(ValueError, match="variant='custom'"):
        ModelConfig(variant="tiny", depth=2)
    with pytest.raises(ConfigurationError, match="Unknown variant"):
        ModelConfig.for_variant("huge")


def test_encoder_kwargs_follow_the_config():
    cfg = ModelConfig(expand=2, state_dim=8, bidirectional=False)
    kwargs = cfg.encoder_kwargs(32)
    assert kwargs["expanded_dim"] == 64
    assert kwargs["state_dim"] == 8
    assert kwargs["bidirectional"] is False
    assert cfg.expanded_dim == 128


def test_train_schedule_defaults():
    stage1, stage2 = TrainSchedule.for_stage(1), TrainSchedule.for_stage(2)
    assert (stage1.epochs, stage1.batch_size, stage1.lr) == (60, 128, 2e-3)
    assert (stage2.epochs, stage2.batch_size, stage2.lr) == (120, 16, 5e-4)
    assert stage1.lr_decay == stage2.lr_decay == 0.99
    with pytest.raises(ConfigurationError):
        TrainSchedule.for_stage(3)


def test_parse_override():
    """Test dotted keys nest and values parse as TOML scalars."""
    assert parse_override("model.depth=2") == {"model": {"depth": 2}}
    assert parse_override("stage1.lr=1e-3") == {"stage1": {"lr": 1e-3}}
    assert parse_override("model.bidirectional=false") == {"model": {"bidirectional": False}}
    assert parse_override("model.spatial_block=vim") == {"model": {"spatial_block": "vim"}}
    with pytest.raises(ConfigurationError, match="key=value"):
        parse_override("model.depth")


def test_load_config_defaults():
    """Test no files and no overrides give the tiny preset and the stage defaults."""
    config = load_config()
    assert config.model == ModelConfig()
    assert config.stage2.batch_size == 16
    assert config.topology is None


def test_shipped_defaults_file_matches_code():
    """Test the documented defaults file agrees with the field defaults."""
    assert load_config([CONFIGS / "defaults.toml"]) == ExperimentConfig()


def test_load_config_layers(tmp_path):
    """Test later files and overrides win over earlier layers."""
    first = tmp_path / "first.toml"
    first.write_text('[model]\nvariant = "custom"\ndepth = 3\ndim = 32\n[stage1]\nepochs = 5\n')
    second = tmp_path / "second.toml"
    second.write_text("[model]\ndepth = 4\n")
    config = load_config([first, second], ["stage1.batch_size=4"])
    assert (config.model.depth, config.model.dim) == (4, 32)
    assert (config.stage1.epochs, config.stage1.batch_size, config.stage1.lr) == (5, 4, 2e-3)


def test_large_preset_file():
    config = load_config([CONFIGS / "large.toml"])
    assert (config.model.depth, config.model.dim) == (12, 128)


def test_micro_config_resolves_its_topology(monkeypatch, tmp_path):
    """Test the micro configuration finds its 5-joint skeleton from any working directory."""
    micro = (CONFIGS / "micro.toml").resolve()
    monkeypatch.chdir(tmp_path)
    config = load_config([micro])
    assert config.topology == micro.parent / "micro_topology.toml"
    assert config.data.topology == str(micro.parent / "micro_topology.toml")
    topo = config.load_topology()
    assert topo.num_joints == config.model.num_joints == 5
    assert config.model.frames == 8


def test_topology_joint_mismatch():
    """Test a 17-joint model against a 5-joint topology is a configuration error."""
    config = ExperimentConfig(topology=MICRO_TOPOLOGY)
    with pytest.raises(ConfigurationError, match="num_joints"):
        config.load_topology()


def test_load_config_errors(tmp_path):
    """Test unreadable files and invalid values are configuration errors."""
    with pytest.raises(ConfigurationError, match="Failed to read"):
        load_config([tmp_path / "missing.toml"])
    broken = tmp_path / "broken.toml"
    broken.write_text("[model\n")
    with pytest.raises(ConfigurationError, match="Failed to read"):
        load_config([broken])
    with pytest.raises(ConfigurationError, match="Invalid configuration"):
        load_config(overrides=["model.dropout=1.5"])
    with pytest.raises(ConfigurationError, match="Invalid configuration"):
        load_config(overrides=["model.bone_dim=20"])


def test_override_paths_stay_relative_to_the_working_directory(tmp_path):
    """Test a config file's relative topology follows the file but a --set value does not."""
    (tmp_path / "nested").mkdir()
    (tmp_path / "nested" / "exp.toml").write_text('topology = "skeleton.toml"\n')
    config = load_config([tmp_path / "nested" / "exp.toml"])
    assert config.topology == tmp_path / "nested" / "skeleton.toml"

    config = load_config([tmp_path / "nested" / "exp.toml"], ['topology="elsewhere.toml"'])
    assert str(config.topology) == "elsewhere.toml"


def test_invalid_environment_is_a_configuration_error(monkeypatch):
    monkeypatch.setenv("BONELIFT_DETERMINISTIC", "sometimes")
    with pytest.raises(ConfigurationError, match="BONELIFT_"):
        RuntimeSettings.from_env()
