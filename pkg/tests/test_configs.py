"""Module to test the run configuration schema."""

import json
from pathlib import Path

import pytest

from src.configs import RunConfig, Tier, load_run_config
from src.utils.errors import ConfigError

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "default.json"


def test_default_config_matches_schema_defaults():
    """The shipped configuration only adds checkpoint paths to the schema defaults."""
    loaded = load_run_config(str(DEFAULT_CONFIG))
    assert set(loaded.eval.checkpoints) == {t.value for t in Tier}
    assert loaded.model_copy(update={"eval": RunConfig().eval}).model_dump() == RunConfig().model_dump()


def test_unknown_keys_are_rejected(tmp_path):
    """Test that typos in a configuration are errors, not silently ignored.

    Args:
        tmp_path: Temporary directory.
    """
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"sampler": {"stpes": 10}}))
    with pytest.raises(ConfigError):
        load_run_config(str(path))


def test_tier_learning_rates():
    """An explicit learning rate wins over the tier default."""
    config = RunConfig()
    assert config.train.resolved_lr() == 1e-3
    assert config.train.model_copy(update={"tier": Tier.L}).resolved_lr() == 5e-4
    assert config.train.model_copy(update={"lr": 0.1}).resolved_lr() == 0.1
