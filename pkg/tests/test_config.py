"""Tests for configuration module."""

from pathlib import Path

import pytest
import yaml

from src.config import (
    CoveringConfig,
    EllipticConfig,
    GeometryConfig,
    LabConfig,
    apply_overrides,
    config_hash,
    get_lab_config,
    load_constants_config,
    load_lab_config,
    load_problem_presets,
)
from src.errors import ConfigurationError

CONFIG_DIR = Path(__file__).parent.parent / "config"


class TestConfiguration:
    """Test configuration defaults."""

    def test_geometry_config(self):
        """Effective-set constants default to 1/16."""
        config = GeometryConfig()
        assert config.critical_constant == 1 / 16
        assert config.nodal_eps == 1 / 16

    def test_elliptic_config(self):
        """Solver grid has an odd node count so the origin is a node."""
        config = EllipticConfig()
        assert config.grid_nodes == 65
        assert config.grid_nodes % 2 == 1

    def test_covering_config(self):
        """Terminal balls use the Vitali dilation 5."""
        assert CoveringConfig().vitali_dilation == 5.0

    def test_environment_prefix(self, monkeypatch):
        """Sections read their own environment prefix."""
        monkeypatch.setenv("GEOM_CELLS_PER_RADIUS", "7")
        assert GeometryConfig().cells_per_radius == 7

    def test_get_lab_config(self):
        """Test getting laboratory configuration."""
        config = get_lab_config()
        assert isinstance(config, LabConfig)
        assert config.run.seed == 0


class TestOverrides:
    """Test dotted-key overrides and the config hash."""

    def test_apply_overrides(self):
        """Overrides land in their section and are recorded."""
        config = apply_overrides(get_lab_config(), {"hhp.tau": 0.02, "run.seed": 7})
        assert config.hhp.tau == 0.02
        assert config.run.seed == 7
        assert config.run.overrides == {"hhp.tau": 0.02, "run.seed": 7}

    def test_unknown_setting(self):
        """Unknown keys are refused."""
        with pytest.raises(ConfigurationError):
            apply_overrides(get_lab_config(), {"hhp.nope": 1})
        with pytest.raises(ConfigurationError):
            apply_overrides(get_lab_config(), {"nosection.tau": 1})

    def test_invalid_value(self):
        """Values are validated."""
        with pytest.raises(ConfigurationError):
            apply_overrides(get_lab_config(), {"run.seed": "not a number"})

    def test_hash_is_stable(self):
        """Same settings, same hash; overrides change it."""
        base = get_lab_config()
        assert config_hash(base) == config_hash(get_lab_config())
        assert config_hash(base) != config_hash(apply_overrides(base, {"run.seed": 3}))

    def test_hash_ignores_output_location(self, tmp_path):
        """Output directory and workers do not affect numerical output."""
        base = get_lab_config()
        moved = base.model_copy(deep=True)
        moved.run.out_dir = tmp_path
        moved.run.jobs = 4
        assert config_hash(base) == config_hash(moved)


class TestConfigFiles:
    """Test YAML loading."""

    def test_shipped_presets(self):
        """Constant presets ship with a default."""
        presets = load_constants_config(CONFIG_DIR / "constants.yaml")
        assert presets["default"] == {}
        assert presets["outline"]["covering.radius_ratio"] == 100

    def test_preset_file(self):
        """Named presets are applied."""
        config = load_lab_config(CONFIG_DIR / "constants.yaml", "sensitive")
        assert config.geometry.lattice_per_radius == 12

    def test_missing_preset(self):
        """Unknown preset names are refused."""
        with pytest.raises(ConfigurationError):
            load_lab_config(CONFIG_DIR / "constants.yaml", "nope")

    def test_sections_file(self, tmp_path):
        """A file of config sections is accepted."""
        path = tmp_path / "sections.yaml"
        path.write_text(yaml.safe_dump({"run": {"seed": 11}, "covering": {"tau": 0.02}}))
        config = load_lab_config(path)
        assert config.run.seed == 11
        assert config.covering.tau == 0.02

    def test_flat_file_and_explicit_overrides(self, tmp_path):
        """Flat dotted keys load; explicit overrides win."""
        path = tmp_path / "flat.yaml"
        path.write_text(yaml.safe_dump({"run.seed": 5, "hhp.tau": 0.03}))
        config = load_lab_config(path, overrides={"run.seed": 9})
        assert config.run.seed == 9
        assert config.hhp.tau == 0.03

    def test_missing_file(self, tmp_path):
        """A missing file is a configuration error."""
        with pytest.raises(ConfigurationError):
            load_lab_config(tmp_path / "absent.yaml")

    def test_problem_presets(self):
        """Elliptic problems load from YAML."""
        problems = load_problem_presets(CONFIG_DIR / "problems.yaml")
        assert problems["identity"].coefficients.kind == "identity"
        assert problems["identity"].boundary == "re-z3-3z"
        assert problems["smooth-noncritical-0.1"].coefficients.critical is False

    def test_missing_problem_file(self, tmp_path):
        """A missing problems file yields no problems."""
        assert load_problem_presets(tmp_path / "absent.yaml") == {}


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
