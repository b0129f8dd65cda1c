"""Unit tests for config.py."""

import json
import tempfile
from pathlib import Path

import pytest

from dtmpc.config import (
    ConfigError,
    load_config,
    mpc_settings,
    save_config,
    task_config,
    validate_config,
)
from dtmpc.models import GradientRoute

CONFIG_DIR = Path(__file__).parents[1] / "configs"


class TestLoadConfig:
    """Tests for load_config function."""

    def test_load_valid_config(self):
        """Test loading a valid configuration file."""
        with tempfile.TemporaryDirectory() as tmpdir:
            config_file = Path(tmpdir) / "config.json"
            config_data = {
                "system": "dubins",
                "trials": 5,
                "task": {"horizon": 20},
                "mpc": {"eta": 0.05},
                "solve": {"budget": 50, "tol": 1e-6},
            }
            with open(config_file, "w", encoding="utf-8") as f:
                json.dump(config_data, f)

            result = load_config(str(config_file))

            assert result == config_data

    def test_load_nonexistent_file(self):
        """Test that a missing file is a configuration error."""
        with pytest.raises(ConfigError, match="does not exist"):
            load_config("/nonexistent/path/config.json")

    def test_load_malformed_json(self):
        """Test that parse errors name the line and column."""
        with tempfile.TemporaryDirectory() as tmpdir:
            config_file = Path(tmpdir) / "config.json"
            with open(config_file, "w", encoding="utf-8") as f:
                f.write('{\n  "system": "dubins",\n  "trials": ,\n}')

            with pytest.raises(ConfigError, match=r"config\.json:3:\d+:"):
                load_config(config_file)

    @pytest.mark.parametrize("name", ["dubins.json", "quadrotor.json", "robot_arm.json", "smoke.json"])
    def test_bundled_configs(self, name):
        """Test that every bundled configuration validates and builds its settings."""
        config = load_config(CONFIG_DIR / name)
        task_config(config["system"], config)
        mpc_settings(config)


class TestValidateConfig:
    """Tests for validate_config function."""

    def test_unknown_top_level_key(self):
        """Test that unknown keys are rejected."""
        with pytest.raises(ConfigError, match="'sytem'"):
            validate_config({"sytem": "dubins"})

    @pytest.mark.parametrize(
        ("config", "path"),
        [
            ({"task": {"horizn": 10}}, "task.horizn"),
            ({"mpc": {"learning_rate": 0.1}}, "mpc.learning_rate"),
            ({"solve": {"iterations": 10}}, "solve.iterations"),
            ({"bench": {"repetitions": 10}}, "bench.repetitions"),
        ],
    )
    def test_unknown_nested_key(self, config, path):
        """Test that nested unknown keys are reported with their path."""
        with pytest.raises(ConfigError, match=path.replace(".", r"\.")):
            validate_config(config)

    @pytest.mark.parametrize(
        "config",
        [
            {"trials": "ten"},
            {"trials": 2.5},
            {"seed": True},
            {"solve": {"tol": "small"}},
            {"gradcheck": {"inject_bundle_error": 1}},
            {"task": []},
            [1, 2],
        ],
    )
    def test_wrong_types(self, config):
        """Test type validation, including booleans used as numbers."""
        with pytest.raises(ConfigError):
            validate_config(config)

    @pytest.mark.parametrize(
        "config",
        [{"system": "cartpole"}, {"trials": 0}, {"threads": 0}, {"seed": -1}],
    )
    def test_invalid_values(self, config):
        """Test value validation."""
        with pytest.raises(ConfigError):
            validate_config(config)

    def test_numbers_accept_integers(self):
        """Test that integers are accepted where floats are expected."""
        assert validate_config({"solve": {"tol": 0}}) == {"solve": {"tol": 0}}


class TestSaveConfig:
    """Tests for save_config function."""

    def test_save_and_reload(self):
        """Test that a saved configuration loads back unchanged."""
        with tempfile.TemporaryDirectory() as tmpdir:
            config_file = Path(tmpdir) / "nested" / "config.json"
            config_data = {"system": "quadrotor", "bench": {"reps": 20, "routes": ["pdp"]}}

            save_config(config_file, config_data)

            assert load_config(config_file) == config_data


class TestSettingsSections:
    """Tests for building settings from configuration sections."""

    def test_task_config(self):
        """Test applying the task section."""
        cfg = task_config("quadrotor", {"task": {"horizon": 12, "n_random_obstacles": 5}})
        assert cfg.horizon == 12
        assert cfg.n_random_obstacles == 5

    def test_invalid_task_value(self):
        """Test that invalid task values become configuration errors."""
        with pytest.raises(ConfigError, match="Invalid task settings"):
            task_config("dubins", {"task": {"horizon": 0}})

    def test_mpc_settings(self):
        """Test applying the mpc section."""
        settings = mpc_settings({"mpc": {"route": "fd", "solver_budget": 5}})
        assert settings.route is GradientRoute.FINITE_DIFFERENCE
        assert settings.solver_budget == 5

    def test_invalid_mpc_value(self):
        """Test that invalid mpc values become configuration errors."""
        with pytest.raises(ConfigError, match="Invalid mpc settings"):
            mpc_settings({"mpc": {"route": "unrolling"}})
