"""Configuration management for the critical-set laboratory."""

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from loguru import logger
from pydantic import BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings

from .errors import ConfigurationError


class CoefficientPreset(BaseModel):
    """Named coefficient field for the elliptic solver."""

    kind: str = Field(..., description="identity, smooth or linear-diagonal")
    lam: float = Field(default=0.0, ge=0.0, le=0.3, description="Ellipticity/Lipschitz bound")
    critical: bool = Field(default=True, description="Zero-order term c vanishes")


class ProblemPreset(BaseModel):
    """Elliptic problem: coefficients plus boundary data preset."""

    name: str
    coefficients: CoefficientPreset
    boundary: str = Field(..., description="Expansion preset name used as boundary data")
    grid_nodes: Optional[int] = Field(default=None, description="Override grid resolution")
    description: str = ""


class HhpConfig(BaseSettings):
    """Homogeneous harmonic polynomial checks."""

    eps0: float = 1e-4
    tau: float = 1e-2
    sphere_samples_per_dim: int = 10000
    sup_norm_samples: int = 20000
    seed: int = 0

    class Config:
        env_prefix = "HHP_"


class FrequencyConfig(BaseSettings):
    """Frequency, pinching and tangent-map checks."""

    eps0: float = 1e-3
    profile_points: int = 64
    growth_law_rtol: float = 1e-8
    window_points: int = 9
    uniform_samples: int = 48
    sample_denominator: int = 64

    class Config:
        env_prefix = "FREQ_"


class GeometryConfig(BaseSettings):
    """Critical radii, effective sets and volumes."""

    critical_constant: float = 1 / 16
    singular_eps: float = 1 / 16
    nodal_eps: float = 1 / 16
    bisection_rtol: float = 1e-4
    min_scale_fraction: float = 1e-8
    lattice_per_radius: int = 8
    cells_per_radius: int = 4
    half_width: float = 0.5
    boundary_nodes: int = 64
    d_critical_samples: int = 64
    root_cluster_tol: float = 1e-6
    newton_steps: int = 8
    nodal_tau: float = 1e-2
    nodal_samples: int = 4096
    slab_points: int = 1000000

    class Config:
        env_prefix = "GEOM_"


class CoveringConfig(BaseSettings):
    """Constants of the good-scale covering step."""

    vitali_dilation: float = 5.0
    neighbor_factor: float = 5.0
    radius_ratio: float = 7.0
    small_ball_exponent: float = 3.0
    annulus_divisor: float = 11.0
    tau: float = 1e-2
    eps: float = 0.05
    degree_factor: float = 2.0
    good_scale_base: int = 20
    shrink_factor: Optional[float] = None
    improved_2d: bool = True
    max_target_points: int = 200000
    alignment_eps: float = 1e-6
    alignment_samples: int = 500
    tangent_denominator: int = 1024
    mass_ratio_bound: float = 200.0

    class Config:
        env_prefix = "COVER_"


class EllipticConfig(BaseSettings):
    """Finite-difference solver and generalized-frequency quadrature."""

    grid_nodes: int = 65
    half_width: float = 1.0
    residual_tol: float = 1e-10
    boundary_nodes: int = 512
    radial_nodes: int = 24
    lambda_presets: List[float] = Field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2])
    gradient_slack: float = 0.05
    monotonicity_bound: float = 50.0
    monotonicity_tol: float = 1e-9
    projection_radius: float = 0.5
    projection_tol: float = 1e-4
    residual_factor: float = 10.0
    transfer_scale: float = math.exp(-2) / 4
    potential_box: float = 0.75
    radii: List[float] = Field(default_factory=lambda: [0.125, 0.1875, 0.25, 0.375, 0.5])
    tangent_radius: float = 0.5

    class Config:
        env_prefix = "ELLIPTIC_"


class RunConfig(BaseSettings):
    """Batch run parameters; the seed determines every random draw."""

    seed: int = 0
    n: int = 2
    degree_min: int = 1
    degree_max: int = 6
    lam_max: float = 6.0
    r_schedule: List[float] = Field(default_factory=lambda: [1 / 8, 1 / 16, 1 / 32])
    decay: float = 0.7
    corpus_size: int = 20
    out_dir: Path = Field(default_factory=lambda: Path("results"))
    jobs: int = 1
    overrides: Dict[str, Any] = Field(default_factory=dict)

    class Config:
        env_prefix = "RUN_"


class LabConfig(BaseSettings):
    """Main laboratory configuration."""

    app_name: str = "Critical Set Laboratory"
    version: str = "0.1.0"
    debug: bool = False
    log_level: str = "INFO"

    # Config paths
    constants_config: Path = Field(default_factory=lambda: Path("config/constants.yaml"))
    problems_config: Path = Field(default_factory=lambda: Path("config/problems.yaml"))

    # Sub-configurations
    hhp: HhpConfig = Field(default_factory=HhpConfig)
    frequency: FrequencyConfig = Field(default_factory=FrequencyConfig)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    covering: CoveringConfig = Field(default_factory=CoveringConfig)
    elliptic: EllipticConfig = Field(default_factory=EllipticConfig)
    run: RunConfig = Field(default_factory=RunConfig)

    class Config:
        env_file = ".env"
        env_nested_delimiter = "__"


def load_constants_config(config_path: Path) -> Dict[str, Dict[str, Any]]:
    """Load named constant presets from YAML."""
    try:
        with open(config_path, "r") as f:
            data = yaml.safe_load(f) or {}

        presets = {}
        for preset_name, overrides in data.items():
            presets[preset_name] = dict(overrides or {})

        logger.info(f"Loaded {len(presets)} constant presets from {config_path}")
        return presets
    except FileNotFoundError:
        logger.warning(f"Constants config not found at {config_path}")
        return {}


def load_problem_presets(config_path: Path) -> Dict[str, ProblemPreset]:
    """Load elliptic problem presets from YAML."""
    try:
        with open(config_path, "r") as f:
            data = yaml.safe_load(f) or {}

        problems = {}
        for problem_name, problem_data in data.items():
            if "name" not in problem_data:
                problem_data["name"] = problem_name
            problems[problem_name] = ProblemPreset(**problem_data)

        logger.info(f"Loaded {len(problems)} elliptic problems from {config_path}")
        return problems
    except FileNotFoundError:
        logger.warning(f"Problems config not found at {config_path}")
        return {}


def apply_overrides(config: LabConfig, overrides: Dict[str, Any]) -> LabConfig:
    """Return a copy of ``config`` with dotted-key overrides applied.

    Args:
        config: Base configuration
        overrides: Mapping such as ``{"hhp.tau": 0.02, "run.seed": 7}``

    Returns:
        New validated configuration; the overrides are recorded in ``run.overrides``
    """
    data = config.model_dump()
    for key, value in sorted(overrides.items()):
        section, _, field = key.partition(".")
        if not field:
            if section not in data or isinstance(data[section], dict):
                raise ConfigurationError(f"Unknown top-level setting: {key}")
            data[section] = value
            continue
        if section not in data or not isinstance(data[section], dict):
            raise ConfigurationError(f"Unknown config section: {section}")
        if field not in data[section]:
            raise ConfigurationError(f"Unknown setting {field} in section {section}")
        data[section][field] = value
    data["run"]["overrides"] = {**data["run"].get("overrides", {}), **overrides}
    try:
        return LabConfig.model_validate(data)
    except ValidationError as e:
        logger.error(f"Invalid overrides {overrides}: {e}")
        raise ConfigurationError(str(e)) from e


def config_hash(config: LabConfig) -> str:
    """Stable hash of every setting that can change numerical output."""
    payload = config.model_dump(mode="json", exclude={"debug", "log_level"})
    payload["run"].pop("out_dir", None)
    payload["run"].pop("jobs", None)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def get_lab_config() -> LabConfig:
    """Get or create laboratory configuration."""
    return LabConfig()


def load_lab_config(
    config_path: Optional[Path] = None,
    preset: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> LabConfig:
    """Build the run configuration from a YAML file, a named preset and explicit overrides.

    The YAML file is a preset file (``name -> {dotted.key: value}``), a mapping of
    config sections or a flat mapping of dotted keys. Explicit ``overrides`` win.
    """
    config = get_lab_config()
    merged: Dict[str, Any] = {}
    if config_path is not None or preset is not None:
        path = Path(config_path) if config_path is not None else config.constants_config
        try:
            with open(path, "r") as f:
                data = yaml.safe_load(f) or {}
        except FileNotFoundError as e:
            raise ConfigurationError(f"Config file not found: {path}") from e
        sections = set(LabConfig.model_fields)
        if data and all(k in sections and isinstance(v, dict) for k, v in data.items()):
            merged.update({f"{k}.{field}": value for k, v in data.items() for field, value in v.items()})
        elif data and all(isinstance(v, dict) or v is None for v in data.values()):
            presets = load_constants_config(path)
            name = preset or "default"
            if name not in presets:
                raise ConfigurationError(f"Preset {name!r} not found in {path}")
            merged.update(presets[name])
        elif preset is not None:
            raise ConfigurationError(f"{path} holds no presets; cannot select {preset!r}")
        else:
            merged.update(data)
    merged.update(overrides or {})
    return apply_overrides(config, merged) if merged else config
