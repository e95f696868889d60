"""
Unit tests for configuration initialization
Tests the default config file and the run directory layout
"""

import shutil
import tempfile
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

from wpflow.config.config_manager import ConfigManager, ExperimentConfig
from wpflow.config.init_defaults import (
    get_default_config,
    init_data_file,
    initialize_run_directory,
    render_config,
)


class TestInitDefaults:
    """Test configuration initialization"""

    def setup_method(self):
        """Create a temporary directory for each test"""
        self.temp_dir = Path(tempfile.mkdtemp())

    def teardown_method(self):
        """Clean up temporary directory after each test"""
        if self.temp_dir.exists():
            shutil.rmtree(self.temp_dir)

    def test_initialize_creates_run_layout(self):
        """Test that initialize_run_directory creates the run and logs directories"""
        run_dir = initialize_run_directory(self.temp_dir / "drift-seed42")

        assert run_dir.is_dir()
        assert (run_dir / "logs").exists()
        assert (run_dir / "logs").is_dir()

    def test_initialize_is_idempotent(self):
        run_dir = self.temp_dir / "validate-seed1"
        initialize_run_directory(run_dir)
        (run_dir / "keep.txt").write_text("x")
        initialize_run_directory(run_dir)
        assert (run_dir / "keep.txt").read_text() == "x"

    def test_init_data_file_does_not_overwrite(self):
        """Test that init_data_file doesn't overwrite existing files"""
        config_file = self.temp_dir / "config.toml"
        config_file.write_text("[run]\nseed = 5\n")

        assert not init_data_file(config_file, render_config(get_default_config()), "config file")
        assert config_file.read_text() == "[run]\nseed = 5\n"

    def test_init_data_file_creates_parents(self):
        target = self.temp_dir / "a" / "b" / "config.toml"
        assert init_data_file(target, "[run]\n", "config file")
        assert target.read_text() == "[run]\n"

    def test_default_config_structure(self):
        """Test that default config has all required sections"""
        config = get_default_config()

        for section in [
            "run", "metric", "observability", "integrator", "ball", "geometry", "geodesic",
            "escape", "drift", "volumes", "codim", "correlation", "certificate", "gamma",
        ]:
            assert section in config

        assert config["run"]["seed"] == 42
        assert config["metric"]["eta"] == 0.0
        assert config["ball"]["radius"] == 0.2

    def test_defaults_follow_the_model(self):
        config = get_default_config()
        expected = ExperimentConfig().model_dump(mode="json")
        expected["run"]["seed"] = 42
        assert config == expected
        for key in ["cusp_speed_floor", "energy_tolerance", "max_steps"]:
            assert key in config["integrator"]

    def test_rendered_defaults_round_trip_to_model(self):
        data = tomllib.loads(render_config(get_default_config()))
        config = ConfigManager.from_dict(data).get_config()
        assert config.integrator == ExperimentConfig().integrator
        assert config.volumes.rho_list == ExperimentConfig().volumes.rho_list

    def test_none_values_are_not_rendered(self):
        text = render_config({"run": {"seed": None, "workers": 2}})
        assert tomllib.loads(text) == {"run": {"workers": 2}}

    def test_rendered_config_is_valid(self):
        """Test that the rendered defaults parse and validate"""
        text = render_config(get_default_config())
        data = tomllib.loads(text)
        assert data["integrator"]["rtol"] == 1e-11
        assert data["observability"]["prometheus_enabled"] is True

        config = ConfigManager.from_dict(data).get_config()
        assert config.run.seed == 42
        assert config.metric.torus_sides == (1.0, 1.0)

    def test_rendered_strings_are_quoted(self):
        text = render_config({"run": {"out_dir": 'a "b"'}})
        assert tomllib.loads(text)["run"]["out_dir"] == 'a "b"'
