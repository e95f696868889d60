"""
Unit tests for configuration loading and overrides
"""

import json
import os
import shutil
import tempfile
from pathlib import Path
from unittest.mock import patch

import pytest

from wpflow.config.config_manager import ConfigManager, MetricSpec
from wpflow.models.errors import ConfigError


class TestConfigManager:
    """Test TOML loading, validation and overrides"""

    def setup_method(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def teardown_method(self):
        if self.temp_dir.exists():
            shutil.rmtree(self.temp_dir)

    def test_defaults(self):
        config = ConfigManager().get_config()
        assert config.run.experiment == "validate"
        assert config.run.seed is None
        assert config.metric == MetricSpec()
        assert config.ball.radius == 0.2

    def test_load_file(self):
        path = self.temp_dir / "config.toml"
        path.write_text('[run]\nexperiment = "drift"\nseed = 7\n\n[metric]\neta = 0.2\n')
        config = ConfigManager.from_file(path).get_config()
        assert config.run.experiment == "drift"
        assert config.run.seed == 7
        assert config.metric.eta == 0.2

    def test_missing_file_raises(self):
        with pytest.raises(ConfigError):
            ConfigManager.from_file(self.temp_dir / "nope.toml")

    def test_parse_error_reports_location(self):
        manager = ConfigManager()
        with pytest.raises(ConfigError) as exc:
            manager.load_text("[run]\nseed = = 3\n", source="bad.toml")
        assert "bad.toml" in str(exc.value)
        assert "line 2" in str(exc.value)

    def test_unknown_section_raises(self):
        with pytest.raises(ConfigError) as exc:
            ConfigManager.from_dict({"scheduler": {"x": 1}})
        assert any("scheduler" in d for d in exc.value.diagnostics)

    def test_invalid_value_names_field(self):
        with pytest.raises(ConfigError) as exc:
            ConfigManager.from_dict({"metric": {"eta": 0.9, "x_max": 1.2}})
        assert exc.value.diagnostics

    def test_missing_seed_raises(self):
        with pytest.raises(ConfigError):
            ConfigManager().apply_overrides(experiment="drift")

    def test_cli_overrides_file(self):
        manager = ConfigManager.from_dict({"run": {"seed": 1, "workers": 2}})
        config = manager.apply_overrides(seed=9, workers=4, out_dir=self.temp_dir)
        assert config.run.seed == 9
        assert config.run.workers == 4
        assert config.run.out_dir == self.temp_dir

    def test_environment_override_precedence(self):
        env_dir = self.temp_dir / "env"
        cli_dir = self.temp_dir / "cli"
        with patch.dict(os.environ, {"WPFLOW_OUT_DIR": str(env_dir)}):
            manager = ConfigManager.from_dict({"run": {"seed": 1, "out_dir": "file"}})
            assert manager.apply_overrides().run.out_dir == env_dir
            assert manager.apply_overrides(out_dir=cli_dir).run.out_dir == cli_dir

    def test_invalid_override_raises(self):
        with pytest.raises(ConfigError):
            ConfigManager.from_dict({"run": {"seed": 1}}).apply_overrides(workers=0)

    def test_get_config_returns_copy(self):
        manager = ConfigManager.from_dict({"run": {"seed": 1}})
        config = manager.get_config()
        config.run.seed = 99
        assert manager.get_config().run.seed == 1

    def test_export_config(self):
        manager = ConfigManager.from_dict({"run": {"seed": 3}, "metric": {"eta": 0.1}})
        exported = json.loads(manager.export_config())
        assert exported["run"]["seed"] == 3
        assert exported["metric"]["eta"] == 0.1
        assert ConfigManager.from_dict(exported).get_config() == manager.get_config()
