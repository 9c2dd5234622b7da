"""
Configuration settings for the virtual drive test QoE pipeline.

Two layers live here. ``Settings`` carries process-level options (artifact
root, log level, default config file) that may be overridden from the
environment. ``RunConfig`` carries every pipeline parameter, grouped into
stage sections, and is loaded from a plain-text INI file.
"""

import configparser
import hashlib
import json
import os
import typing
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .constants import BOTTLENECK_WIDTH, ENCODER_WIDTH, LearnerKind, MIN_MOS_SAMPLES, PATTERN_LENGTH
from .exceptions import ConfigurationError


class Settings:
    """
    Process-level configuration.

    Centralizes the options that do not affect pipeline results, so they
    never enter a config hash.
    """

    def __init__(self) -> None:
        """Initialize default configuration settings."""
        # Artifact directory
        self.OUT_DIR = Path("artifacts")

        # Logging
        self.LOG_LEVEL = "INFO"
        self.LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

        # Application settings
        self.APP_TITLE = "vdt-qoe"
        self.APP_DESCRIPTION = "Virtual drive test QoE pipeline"
        self.APP_VERSION = "1.0.0"

        # Default run configuration file (optional)
        self.CONFIG_PATH: Optional[Path] = None

        # Artifact file names
        self.MANIFEST_FILE = "manifest.json"
        self.RUN_CONFIG_FILE = "run_config.json"

    def get_artifact_path(self, filename: str, out_dir: Optional[Path] = None) -> Path:
        """
        Get full path to an artifact file.

        Args:
            filename: Name of the artifact file
            out_dir: Artifact directory overriding OUT_DIR (optional)

        Returns:
            Full path to the artifact file
        """
        return Path(out_dir or self.OUT_DIR) / filename

    def ensure_out_directory(self, out_dir: Optional[Path] = None) -> bool:
        """
        Ensure the artifact directory exists.

        Creates the directory if it doesn't exist.

        Returns:
            True if directory exists or was created successfully
        """
        try:
            Path(out_dir or self.OUT_DIR).mkdir(parents=True, exist_ok=True)
            return True
        except OSError:
            return False


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """
    Get the global settings instance.

    Returns:
        The application settings instance
    """
    return settings


def load_env_settings() -> None:
    """
    Load settings from environment variables.

    Recognized variables are VDT_OUT_DIR, VDT_LOG_LEVEL and VDT_CONFIG.
    """
    if os.getenv("VDT_OUT_DIR"):
        settings.OUT_DIR = Path(os.environ["VDT_OUT_DIR"])
    if os.getenv("VDT_LOG_LEVEL"):
        settings.LOG_LEVEL = os.environ["VDT_LOG_LEVEL"].upper()
    if os.getenv("VDT_CONFIG"):
        settings.CONFIG_PATH = Path(os.environ["VDT_CONFIG"])


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

_STRICT = ConfigDict(extra="forbid", validate_assignment=True)

DEFAULT_ABR_LADDER: List[Tuple[float, float]] = [
    (400.0, 2.2),
    (900.0, 3.0),
    (1400.0, 3.6),
    (2000.0, 4.0),
    (2850.0, 4.35),
]


class SnrProcessConfig(BaseModel):
    """First-order autoregressive SNR process around a scenario mean."""

    model_config = _STRICT

    mean_normal: float = 3.9
    mean_anomalous: float = -6.0
    ar_coefficient: float = Field(0.8, ge=0.0, lt=1.0)
    noise_std: float = Field(0.45, ge=0.0)


class GenConfig(BaseModel):
    """
    Synthetic generator configuration.

    Defaults are calibrated so that normal sessions sit on the top ladder rung
    after a short ramp-up and anomalous sessions fade towards the lowest rung.
    """

    model_config = _STRICT

    n_sessions: int = Field(1199, ge=1)
    anomaly_fraction: float = Field(0.0234, ge=0.0, le=1.0)
    duration_s: float = Field(60.0, gt=0.0, le=60.0)
    kpi_period_s: float = Field(1.0, gt=0.0)
    mos_period_min_s: float = Field(4.0, gt=0.0)
    mos_period_max_s: float = Field(5.0, gt=0.0)
    seed: int = Field(0, ge=0, lt=2**64)
    snr_process: SnrProcessConfig = Field(default_factory=SnrProcessConfig)
    abr_ladder: List[Tuple[float, float]] = Field(default_factory=lambda: list(DEFAULT_ABR_LADDER))
    anomaly_shapes: List[str] = Field(default_factory=lambda: ["late_fade", "early_fade", "oscillation"])

    # Observation noise on the reported MOS samples
    mos_noise_std: float = Field(0.1, ge=0.0)

    # Throughput and KPI maps
    throughput_scale_kbps: float = Field(8000.0, gt=0.0)
    prb_mean: float = 40.0
    prb_snr_slope: float = Field(1.5, ge=0.0)
    prb_noise_std: float = Field(5.0, ge=0.0)
    prb_max: float = Field(100.0, gt=0.0)
    rsrp_intercept: float = -95.0
    rsrp_slope: float = 1.2
    rsrp_noise_std: float = Field(2.0, ge=0.0)
    rsrq_intercept: float = -11.0
    rsrq_slope: float = 0.25
    rsrq_noise_std: float = Field(0.8, ge=0.0)

    # Player model
    buffer_cap_s: float = Field(30.0, gt=0.0)
    startup_buffer_s: float = Field(2.0, ge=0.0)
    up_buffer_s: float = Field(8.0, ge=0.0)
    down_buffer_s: float = Field(3.0, ge=0.0)
    safety_factor: float = Field(0.9, gt=0.0, le=1.0)
    throughput_ewma: float = Field(0.5, gt=0.0, le=1.0)
    stall_penalty: float = Field(1.5, ge=0.0)
    startup_penalty: float = Field(1.0, ge=0.0)
    startup_ramp_s: float = Field(12.0, gt=0.0)

    # Anomaly onset windows (seconds)
    late_fade_onset: Tuple[float, float] = (15.0, 25.0)
    early_fade_onset: Tuple[float, float] = (10.0, 12.0)
    early_fade_recovery: Tuple[float, float] = (44.0, 50.0)
    oscillation_onset: Tuple[float, float] = (12.0, 18.0)
    oscillation_period_s: float = Field(10.0, gt=0.0)
    oscillation_deep_s: float = Field(8.0, gt=0.0)

    n_workers: int = Field(1, ge=1)

    @field_validator("abr_ladder", mode="before")
    @classmethod
    def parse_ladder(cls, value: Any) -> Any:
        """Accept ``bitrate:quality`` strings from the config file."""
        if isinstance(value, (list, tuple)):
            parsed = []
            for item in value:
                if isinstance(item, str):
                    bitrate, _, quality = item.partition(":")
                    parsed.append((float(bitrate), float(quality)))
                else:
                    parsed.append(item)
            return parsed
        return value

    @field_validator("abr_ladder")
    @classmethod
    def validate_ladder(cls, value: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
        """Ladder rungs must increase in both bitrate and quality."""
        if not value:
            raise ValueError("abr_ladder must have at least one rung")
        for (b0, q0), (b1, q1) in zip(value, value[1:]):
            if b1 <= b0 or q1 < q0:
                raise ValueError("abr_ladder must be increasing in bitrate and quality")
        for bitrate, quality in value:
            if bitrate <= 0 or not 1.0 <= quality <= 5.0:
                raise ValueError("abr_ladder rung out of range")
        return value

    @field_validator("anomaly_shapes")
    @classmethod
    def validate_shapes(cls, value: List[str]) -> List[str]:
        """Shapes must be drawn from the known taxonomy."""
        known = {"late_fade", "early_fade", "oscillation"}
        unknown = [shape for shape in value if shape not in known]
        if unknown or not value:
            raise ValueError(f"unknown anomaly shapes: {unknown}")
        return value

    @model_validator(mode="after")
    def validate_periods(self) -> "GenConfig":
        if self.mos_period_min_s > self.mos_period_max_s:
            raise ValueError("mos_period_min_s must not exceed mos_period_max_s")
        if self.down_buffer_s > self.up_buffer_s:
            raise ValueError("down_buffer_s must not exceed up_buffer_s")
        if self.oscillation_deep_s > self.oscillation_period_s:
            raise ValueError("oscillation_deep_s must not exceed oscillation_period_s")
        return self


class PathsConfig(BaseModel):
    model_config = _STRICT

    out_dir: Optional[str] = None
    input_csv: Optional[str] = None


# Offsets used to derive stage seeds from the global seed
SEED_OFFSETS: Dict[str, int] = {
    "generator": 1,
    "split": 2,
    "pattern": 3,
    "predictor": 4,
    "detector": 5,
    "explainer": 6,
}


class SeedsConfig(BaseModel):
    """Global seed plus one explicit seed per stochastic stage."""

    model_config = _STRICT

    global_seed: int = Field(1199, ge=0, lt=2**63)
    generator: Optional[int] = Field(None, ge=0, lt=2**64)
    split: Optional[int] = Field(None, ge=0, lt=2**64)
    pattern: Optional[int] = Field(None, ge=0, lt=2**64)
    predictor: Optional[int] = Field(None, ge=0, lt=2**64)
    detector: Optional[int] = Field(None, ge=0, lt=2**64)
    explainer: Optional[int] = Field(None, ge=0, lt=2**64)

    def derived(self, explicit: Optional[Dict[str, int]] = None) -> "SeedsConfig":
        """
        Fill stage seeds that were not set explicitly.

        Args:
            explicit: Stage seeds to keep regardless of the global seed

        Returns:
            A copy with every stage seed populated
        """
        explicit = explicit or {}
        update = {
            stage: explicit.get(stage, self.global_seed + offset)
            for stage, offset in SEED_OFFSETS.items()
        }
        return self.model_copy(update=update)

    def explicit_seeds(self) -> Dict[str, int]:
        """Stage seeds that are currently set."""
        return {stage: getattr(self, stage) for stage in SEED_OFFSETS if getattr(self, stage) is not None}


class FeatureConfig(BaseModel):
    model_config = _STRICT

    min_mos_samples: int = Field(MIN_MOS_SAMPLES, ge=1)
    n_workers: int = Field(1, ge=1)


class PatternConfig(BaseModel):
    """Autoencoder architecture and training hyperparameters."""

    model_config = _STRICT

    sequence_length: int = Field(PATTERN_LENGTH, ge=PATTERN_LENGTH, le=PATTERN_LENGTH)
    encoder_width: int = Field(ENCODER_WIDTH, ge=1)
    bottleneck_width: int = Field(BOTTLENECK_WIDTH, ge=1)
    split_ratio: float = Field(0.75, gt=0.0, lt=1.0)
    epochs_grid: List[int] = Field(default_factory=lambda: [100, 200])
    batch_size_grid: List[int] = Field(default_factory=lambda: [16, 32])
    learning_rate_grid: List[float] = Field(default_factory=lambda: [1e-3, 3e-4])
    dropout_grid: List[float] = Field(default_factory=lambda: [0.0, 0.1])
    grid_search: bool = True
    head_bias_init: float = 3.0
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_epsilon: float = Field(1e-8, gt=0.0)
    divergence_factor: float = Field(10.0, gt=1.0)
    divergence_patience: int = Field(5, ge=1)
    n_workers: int = Field(1, ge=1)

    @field_validator("epochs_grid", "batch_size_grid")
    @classmethod
    def positive_ints(cls, value: List[int]) -> List[int]:
        if not value or any(v < 1 for v in value):
            raise ValueError("grid values must be positive")
        return value

    @field_validator("learning_rate_grid")
    @classmethod
    def positive_rates(cls, value: List[float]) -> List[float]:
        if not value or any(v <= 0 for v in value):
            raise ValueError("learning rates must be positive")
        return value

    @field_validator("dropout_grid")
    @classmethod
    def dropout_range(cls, value: List[float]) -> List[float]:
        if not value or any(not 0.0 <= v < 1.0 for v in value):
            raise ValueError("dropout rates must lie in [0, 1)")
        return value


class PredictorConfig(BaseModel):
    """Tree learner hyperparameters and the trial protocol."""

    model_config = _STRICT

    learner: LearnerKind = LearnerKind.FOREST
    n_trees: int = Field(100, ge=1)
    max_features: float = Field(1.0 / 3.0, gt=0.0, le=1.0)
    max_depth: Optional[int] = Field(None, ge=1)
    min_samples_leaf: int = Field(2, ge=1)
    bootstrap: bool = True
    n_stages: int = Field(200, ge=1)
    shrinkage: float = Field(0.1, gt=0.0, le=1.0)
    boost_depth: int = Field(3, ge=1)
    subsample: float = Field(1.0, gt=0.0, le=1.0)
    n_trials: int = Field(50, ge=2)
    split_ratio: float = Field(0.75, gt=0.0, lt=1.0)
    n_folds: int = Field(4, ge=2)
    compare_learners: bool = True
    n_jobs: int = Field(1, ge=1)


class DetectorConfig(BaseModel):
    model_config = _STRICT

    percentile: float = Field(0.9, ge=0.0, le=1.0)
    actual_threshold: float = Field(0.5, ge=0.0)
    actual_quantile: Optional[float] = Field(None, ge=0.0, le=1.0)
    n_trials: int = Field(10, ge=2)


class ExplainerConfig(BaseModel):
    model_config = _STRICT

    max_depth: int = Field(8, ge=1)
    feature_subset: Optional[List[str]] = None
    max_rows: Optional[int] = Field(500, ge=1)
    n_decision_paths: int = Field(3, ge=0)


class RunConfig(BaseModel):
    """
    Complete pipeline configuration.

    Stage seeds are always populated after construction; the content hash
    covers every section except ``paths``, so relocating the artifact
    directory does not invalidate the manifest.
    """

    model_config = _STRICT

    paths: PathsConfig = Field(default_factory=PathsConfig)
    seeds: SeedsConfig = Field(default_factory=SeedsConfig)
    generator: GenConfig = Field(default_factory=GenConfig)
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    pattern: PatternConfig = Field(default_factory=PatternConfig)
    predictor: PredictorConfig = Field(default_factory=PredictorConfig)
    detector: DetectorConfig = Field(default_factory=DetectorConfig)
    explainer: ExplainerConfig = Field(default_factory=ExplainerConfig)

    @model_validator(mode="before")
    @classmethod
    def derive_seeds(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        seeds = data.get("seeds") or {}
        if isinstance(seeds, SeedsConfig):
            seeds = seeds.model_dump()
        seeds = dict(seeds)
        global_seed = int(seeds.get("global_seed", SeedsConfig.model_fields["global_seed"].default))
        for stage, offset in SEED_OFFSETS.items():
            if seeds.get(stage) is None:
                seeds[stage] = global_seed + offset
        generator = data.get("generator") or {}
        if isinstance(generator, GenConfig):
            generator = generator.model_dump()
        generator = dict(generator)
        generator["seed"] = seeds["generator"]
        return {**data, "seeds": seeds, "generator": generator}

    def with_global_seed(self, global_seed: int, explicit: Optional[Dict[str, int]] = None) -> "RunConfig":
        """
        Re-derive stage seeds from a new global seed.

        Args:
            global_seed: Replacement global seed
            explicit: Stage seeds set in the config file, kept as they are

        Returns:
            A new RunConfig
        """
        data = self.model_dump()
        data["seeds"] = {"global_seed": global_seed, **(explicit or {})}
        return RunConfig.model_validate(data)

    def canonical_json(self) -> str:
        """Canonical JSON of every result-affecting section."""
        payload = self.model_dump(mode="json", exclude={"paths"})
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        """SHA-256 of the canonical JSON dump."""
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def _is_list_field(annotation: Any) -> bool:
    origin = typing.get_origin(annotation)
    if origin is typing.Union:
        return any(_is_list_field(arg) for arg in typing.get_args(annotation) if arg is not type(None))
    return origin in (list, tuple)


def _section_payload(model: type, items: Dict[str, str]) -> Dict[str, Any]:
    """Turn raw INI strings into a dict pydantic can validate."""
    payload: Dict[str, Any] = {}
    for key, raw in items.items():
        head, _, rest = key.partition(".")
        if rest:
            nested_field = model.model_fields.get(head)
            if nested_field is None:
                raise ConfigurationError(f"unknown config key: {key}", key=key, value=raw)
            nested_model = nested_field.annotation
            payload.setdefault(head, {}).update(_section_payload(nested_model, {rest: raw}))
            continue
        field = model.model_fields.get(key)
        if field is None:
            raise ConfigurationError(f"unknown config key: {key}", key=key, value=raw)
        value: Any = raw.strip()
        if value.lower() in ("none", ""):
            value = None
        elif _is_list_field(field.annotation):
            value = [part.strip() for part in value.split(",") if part.strip()]
        payload[key] = value
    return payload


def load_run_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> Tuple[RunConfig, Dict[str, int]]:
    """
    Load a run configuration from an INI file.

    Args:
        path: Config file; defaults are used when None
        overrides: Section -> key -> value applied on top of the file

    Returns:
        The validated RunConfig and the stage seeds the file set explicitly

    Raises:
        ConfigurationError: If the file is unreadable, has unknown keys or invalid values
    """
    data: Dict[str, Any] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, "r", encoding="utf-8") as handle:
                parser.read_file(handle)
        except (OSError, configparser.Error) as e:
            raise ConfigurationError(f"cannot read config file {path}: {e}", key="config", value=str(path)) from e

        for section in parser.sections():
            field = RunConfig.model_fields.get(section)
            if field is None:
                raise ConfigurationError(f"unknown config section: {section}", key=section)
            data[section] = _section_payload(field.annotation, dict(parser.items(section)))

    for section, values in (overrides or {}).items():
        data.setdefault(section, {}).update(values)

    explicit = {stage: int(v) for stage, v in (data.get("seeds") or {}).items() if stage in SEED_OFFSETS and v is not None}

    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first.get("loc", ()))
        raise ConfigurationError(f"invalid config value for {key}: {first.get('msg')}", key=key, value=str(first.get("input"))) from e
    return config, explicit
