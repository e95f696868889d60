"""
Configuration management for wpflow
Validated experiment configuration with TOML loading and JSON export
"""

from typing import Any, Dict, List, Literal, Optional, Tuple
from pathlib import Path
import json
import logging
import threading
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from wpflow.models.errors import ConfigError

logger = logging.getLogger(__name__)

EXPERIMENT_IDS = (
    "geometry-report",
    "geodesic",
    "escape",
    "drift",
    "volumes",
    "codim",
    "correlation",
    "certificate",
    "gamma-bound",
    "validate",
)

ExperimentId = Literal[
    "geometry-report",
    "geodesic",
    "escape",
    "drift",
    "volumes",
    "codim",
    "correlation",
    "certificate",
    "gamma-bound",
    "validate",
]


class MetricSpec(BaseModel):
    """Parameters of the model manifold: cusp plane crossed with a flat 2-torus"""
    model_config = ConfigDict(frozen=True)

    x_max: float = Field(default=1.0, gt=0, description="Outer wall of the cusp coordinate")
    x_floor: float = Field(default=1e-6, gt=0, description="Integration aborts below this x")
    tau_period: float = Field(default=1.0, gt=0, description="Period of the twist coordinate")
    torus_sides: Tuple[float, float] = Field(default=(1.0, 1.0), description="Side lengths of the flat torus factor")
    eta: float = Field(default=0.0, ge=0.0, lt=1.0, description="Coupling perturbation strength (0 = product model)")

    @model_validator(mode="after")
    def _check_chart(self) -> "MetricSpec":
        if not self.x_floor < self.x_max:
            raise ValueError(f"x_floor ({self.x_floor}) must be below x_max ({self.x_max})")
        if min(self.torus_sides) <= 0:
            raise ValueError("torus_sides must be positive")
        # compact block 1 + eta x^4 cos(.) must stay positive on the whole chart
        if self.eta * self.x_max ** 4 >= 1.0:
            raise ValueError(f"eta * x_max^4 = {self.eta * self.x_max ** 4} must be below 1")
        return self

    def to_config_block(self) -> str:
        """Render as a [metric] block of key = value lines"""
        lines = [
            "[metric]",
            f"x_max = {self.x_max!r}",
            f"x_floor = {self.x_floor!r}",
            f"tau_period = {self.tau_period!r}",
            f"torus_sides = [{self.torus_sides[0]!r}, {self.torus_sides[1]!r}]",
            f"eta = {self.eta!r}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config_block(cls, text: str) -> "MetricSpec":
        """Parse key = value text, with or without the [metric] header"""
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError("Invalid metric block", [str(e)]) from e
        block = data.get("metric", data)
        try:
            return cls(**block)
        except ValidationError as e:
            raise ConfigError("Invalid metric block", _format_validation(e, "metric")) from e


class RunConfig(BaseModel):
    """Experiment selection and execution settings"""
    experiment: ExperimentId = Field(default="validate", description="Experiment id to run")
    seed: Optional[int] = Field(default=None, ge=0, description="Master seed (mandatory, no wall-clock default)")
    out_dir: Path = Field(default=Path("./runs"), description="Root directory for run outputs")
    workers: int = Field(default=1, ge=1, description="Worker processes")
    chunk_size: int = Field(default=2048, ge=1, description="Samples per parallel chunk (independent of workers)")


class ObservabilityConfig(BaseModel):
    """Logging and metrics configuration"""
    prometheus_enabled: bool = Field(default=True, description="Write run metrics to metrics.prom")
    log_format: Literal["json", "text"] = Field(default="text", description="Log format: json or text")
    log_level: str = Field(default="INFO", description="Log level: DEBUG, INFO, WARNING, ERROR, CRITICAL")


class IntegratorConfig(BaseModel):
    """Adaptive Runge-Kutta settings"""
    rtol: float = Field(default=1e-11, gt=0, description="Relative local error tolerance")
    atol: float = Field(default=1e-13, gt=0, description="Absolute local error tolerance")
    max_step: float = Field(default=0.5, gt=0, description="Global step ceiling")
    max_step_factor: float = Field(default=0.1, gt=0, description="Step ceiling relative to x over cusp speed")
    cusp_speed_floor: float = Field(default=1e-3, gt=0, description="Lower clamp of the cusp speed in the step ceiling")
    min_step: float = Field(default=1e-12, gt=0, description="Step underflow threshold")
    energy_tolerance: float = Field(default=1e-8, gt=0, description="Energy drift above which a trajectory is flagged")
    max_steps: int = Field(default=5_000_000, ge=1, description="Hard cap on accepted steps per trajectory")


class BallConfig(BaseModel):
    """Metric ball U in the compact part"""
    center: Tuple[float, float, float, float] = Field(default=(0.75, 0.5, 0.5, 0.5), description="(x, tau, y1, y2)")
    radius: float = Field(default=0.2, gt=0, description="Radius in the metric at the center")


class GeometryReportConfig(BaseModel):
    depths: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4, 0.8, 1.0])
    planes_per_depth: int = Field(default=200, ge=1)


class GeodesicConfig(BaseModel):
    n_trajectories: int = Field(default=100, ge=1)
    horizon: float = Field(default=5.0, gt=0)
    x0_range: Tuple[float, float] = Field(default=(0.3, 0.9))
    energy_trajectories: int = Field(default=1000, ge=1)
    energy_horizon: float = Field(default=10.0, gt=0)


class EscapeConfig(BaseModel):
    eps_list: List[float] = Field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    n_per_eps: int = Field(default=1000, ge=2)
    cap_factor: float = Field(default=10.0, gt=0, description="Horizon cap in units of 1/eps")
    safety_factor: float = Field(default=2.0, ge=1.0, description="Margin applied to the calibrated C0")


class DriftConfig(BaseModel):
    eta: float = Field(default=0.3, ge=0.0, lt=1.0, description="Perturbation used by the drift experiment")
    f_range: Tuple[float, float] = Field(default=(1e-3, 0.5))
    n_bins: int = Field(default=8, ge=4)
    n_per_bin: int = Field(default=64, ge=1)
    method: Literal["covariant", "finite_difference"] = Field(default="covariant")


class VolumesConfig(BaseModel):
    rho_list: List[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05, 0.025, 0.0125])
    eps_list: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625])
    n_per_value: int = Field(default=100_000, ge=100)
    max_rel_stderr: float = Field(default=0.05, gt=0)


class CodimConfig(BaseModel):
    eps_list: List[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05, 0.025, 0.0125])
    n_per_eps: int = Field(default=100_000, ge=100)
    density_exponent: float = Field(default=3.0, ge=0.0, description="Base density exponent (3 = Liouville)")


class CorrelationConfig(BaseModel):
    t_list: List[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0, 5.0])
    n: int = Field(default=20_000, ge=10)
    eps: float = Field(default=0.05, gt=0)


class CertificateConfig(BaseModel):
    eps_list: List[float] = Field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    n: int = Field(default=100_000, ge=1)
    window_multiplier: float = Field(default=1.0, gt=0, description="Flow time in units of 1/(C0 eps)")
    direction: Literal["backward", "forward"] = Field(default="backward")


class GammaConfig(BaseModel):
    eps_list: List[float] = Field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    k_list: List[int] = Field(default_factory=lambda: [1, 2])
    n: int = Field(default=20_000, ge=100)
    norm_points: int = Field(default=256, ge=8)
    certificate_n: int = Field(default=2_000, ge=1)


class ExperimentConfig(BaseModel):
    """Main experiment configuration"""
    run: RunConfig = Field(default_factory=RunConfig)
    metric: MetricSpec = Field(default_factory=MetricSpec)
    observability: ObservabilityConfig = Field(default_factory=ObservabilityConfig)
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)
    ball: BallConfig = Field(default_factory=BallConfig)
    geometry: GeometryReportConfig = Field(default_factory=GeometryReportConfig)
    geodesic: GeodesicConfig = Field(default_factory=GeodesicConfig)
    escape: EscapeConfig = Field(default_factory=EscapeConfig)
    drift: DriftConfig = Field(default_factory=DriftConfig)
    volumes: VolumesConfig = Field(default_factory=VolumesConfig)
    codim: CodimConfig = Field(default_factory=CodimConfig)
    correlation: CorrelationConfig = Field(default_factory=CorrelationConfig)
    certificate: CertificateConfig = Field(default_factory=CertificateConfig)
    gamma: GammaConfig = Field(default_factory=GammaConfig)


class RunnerSettings(BaseSettings):
    """Environment overrides (output directory only)"""
    model_config = SettingsConfigDict(env_prefix="WPFLOW_")

    out_dir: Optional[Path] = None


def _format_validation(error: ValidationError, prefix: str = "") -> List[str]:
    diagnostics = []
    for item in error.errors():
        loc = ".".join(str(part) for part in item["loc"])
        if prefix:
            loc = f"{prefix}.{loc}" if loc else prefix
        diagnostics.append(f"{loc}: {item['msg']}")
    return diagnostics


class ConfigManager:
    """
    Thread-safe holder of the active experiment configuration
    Loads TOML files, applies CLI and environment overrides, exports JSON
    """

    def __init__(self, config: Optional[ExperimentConfig] = None):
        self._lock = threading.RLock()
        self._config = config or ExperimentConfig()

    @classmethod
    def from_file(cls, path: Path) -> "ConfigManager":
        """Load and validate a TOML config file"""
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}", [str(e)]) from e
        manager = cls()
        manager.load_text(text, source=str(path))
        return manager

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ConfigManager":
        manager = cls()
        manager._config = manager._validate(data, source="<dict>")
        return manager

    def load_text(self, text: str, source: str = "<string>") -> None:
        """Parse TOML text into the active configuration"""
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            # tomllib reports "(at line N, column M)" in the message
            raise ConfigError(f"Config parse error in {source}", [str(e)]) from e
        config = self._validate(data, source)
        with self._lock:
            self._config = config
        logger.info(f"Configuration loaded from {source}")

    def _validate(self, data: Dict[str, Any], source: str) -> ExperimentConfig:
        unknown = sorted(set(data) - set(ExperimentConfig.model_fields))
        if unknown:
            raise ConfigError(
                f"Config validation error in {source}",
                [f"{key}: unknown section" for key in unknown],
            )
        try:
            return ExperimentConfig(**data)
        except ValidationError as e:
            raise ConfigError(f"Config validation error in {source}", _format_validation(e)) from e

    def get_config(self) -> ExperimentConfig:
        """Get current configuration (thread-safe copy)"""
        with self._lock:
            return self._config.model_copy(deep=True)

    def apply_overrides(
        self,
        experiment: Optional[str] = None,
        seed: Optional[int] = None,
        out_dir: Optional[Path] = None,
        workers: Optional[int] = None,
    ) -> ExperimentConfig:
        """
        Apply CLI flags and the WPFLOW_OUT_DIR environment override
        Precedence: CLI flag > environment > file
        """
        with self._lock:
            run = self._config.run.model_dump()
            settings = RunnerSettings()
            if settings.out_dir is not None:
                run["out_dir"] = settings.out_dir
            if experiment is not None:
                run["experiment"] = experiment
            if seed is not None:
                run["seed"] = seed
            if out_dir is not None:
                run["out_dir"] = out_dir
            if workers is not None:
                run["workers"] = workers
            try:
                new_run = RunConfig(**run)
            except ValidationError as e:
                raise ConfigError("Invalid command-line overrides", _format_validation(e, "run")) from e
            self._config = self._config.model_copy(update={"run": new_run})
            if self._config.run.seed is None:
                raise ConfigError("Missing master seed", ["run.seed: required (use --seed or [run] seed = N)"])
            return self._config.model_copy(deep=True)

    def export_config(self) -> str:
        """Export configuration as JSON string"""
        with self._lock:
            return json.dumps(self._config.model_dump(mode="json"), indent=2)
