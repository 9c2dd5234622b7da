"""
Shared dependencies for the pipeline subcommands.

Holds the artifact names, the per-invocation PipelineContext (configuration
plus artifact store) and the loaders that turn upstream artifacts back into
domain objects.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from ..core.artifacts import ArtifactStore
from ..core.config import RunConfig, get_settings, load_run_config
from ..core.constants import PATTERN_LENGTH, SESSION_ID_COLUMN
from ..core.exceptions import ArtifactIOError, ConfigurationError
from ..qoe import mos_predictor
from ..qoe.feature_pipeline import FeatureMatrix, read_feature_csv, to_matrix
from ..qoe.models import Dataset, TypicalPattern
from ..qoe.trace_model import ingest_csv, sidecar_path

logger = logging.getLogger(__name__)

# Stage names recorded in the manifest
DATASET_STAGE = "dataset"
FEATURES_STAGE = "features"
PATTERN_STAGE = "train-pattern"
PREDICTOR_STAGE = "train-predictor"
DETECT_STAGE = "detect"
EXPLAIN_STAGE = "explain"
REPORT_STAGE = "report"

# Artifact names
DATASET_CSV = "dataset.csv"
DATASET_META = sidecar_path(Path(DATASET_CSV)).name
INGEST_REPORT_JSON = "ingest_report.json"
FEATURES_CSV = "features.csv"
PEARSON_CSV = "pearson.csv"
FEATURE_REPORT_JSON = "feature_report.json"
AUTOENCODER_JSON = "autoencoder.json"
TYPICAL_PATTERN_CSV = "typical_pattern.csv"
TRAINING_CURVE_CSV = "training_curve.csv"
MOS_MODEL_JSON = "mos_model.json"
EVAL_REPORT_JSON = "eval_report.json"
LEARNER_COMPARISON_JSON = "learner_comparison.json"
PREDICTIONS_CSV = "predictions.csv"
SESSION_SCORES_CSV = "session_scores.csv"
DETECTION_REPORT_JSON = "detection_report.json"
DETECTION_TRIALS_JSON = "detection_trials.json"
THRESHOLD_SWEEP_CSV = "threshold_sweep.csv"
ANOMALOUS_TRAJECTORIES_CSV = "anomalous_trajectories.csv"
SHAP_SUMMARY_JSON = "shap_summary.json"
ATTRIBUTIONS_CSV = "attributions.csv"
DISTILLED_TREE_JSON = "distilled_tree.json"
DECISION_PATHS_JSON = "decision_paths.json"
SNR_CURVES_CSV = "snr_curves.csv"
REPORT_JSON = "report.json"

DATASET_FILES = [DATASET_CSV, DATASET_META]


@dataclass
class PipelineContext:
    """Configuration and artifact store shared by one subcommand invocation."""

    config: RunConfig
    store: ArtifactStore
    explicit_seeds: Dict[str, int] = field(default_factory=dict)

    def config_hash(self) -> str:
        return self.config.content_hash()

    def require(self, stage: str, filenames: Iterable[str]) -> Dict[str, str]:
        """Verify upstream artifacts against the manifest; see ArtifactStore.require_inputs."""
        return self.store.require_inputs(stage, filenames)

    def finish(self, stage: str, outputs: List[str], inputs: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
        """
        Persist the run configuration and record the stage in the manifest.

        Returns:
            The manifest entry of the stage
        """
        self.store.save_text(get_settings().RUN_CONFIG_FILE, self.config.canonical_json() + "\n")
        return self.store.record_stage(stage, self.config_hash(), outputs, inputs)


def build_context(config_path: Optional[str] = None, seed: Optional[int] = None, out_dir: Optional[str] = None) -> PipelineContext:
    """
    Resolve configuration and output directory for a subcommand.

    The output directory is taken from ``out_dir``, then ``[paths] out_dir``
    in the config file, then Settings.OUT_DIR.

    Args:
        config_path: INI config file (Settings.CONFIG_PATH when None)
        seed: Global seed override
        out_dir: Artifact directory override

    Raises:
        ConfigurationError: If the config or the seed override is invalid
    """
    settings = get_settings()
    path = Path(config_path) if config_path else settings.CONFIG_PATH
    config, explicit = load_run_config(path)
    if seed is not None:
        try:
            config = config.with_global_seed(seed, explicit)
        except ValidationError as e:
            raise ConfigurationError(f"invalid seed override: {seed}", key="seeds.global_seed", value=seed) from e
    target = Path(out_dir or config.paths.out_dir or settings.OUT_DIR)
    logger.debug(f"Artifacts in {target}, config hash {config.content_hash()[:12]}")
    return PipelineContext(config=config, store=ArtifactStore(target), explicit_seeds=explicit)


def load_dataset(store: ArtifactStore) -> Dataset:
    return ingest_csv(store.path(DATASET_CSV))


def load_matrix(store: ArtifactStore) -> FeatureMatrix:
    return to_matrix(read_feature_csv(store.path(FEATURES_CSV)))


def load_pattern(store: ArtifactStore) -> TypicalPattern:
    """
    Rebuild the typical pattern from its CSV.

    Raises:
        ArtifactIOError: If the CSV does not hold one valid value per index
    """
    frame = store.load_frame(TYPICAL_PATTERN_CSV)
    if list(frame["index"]) != list(range(PATTERN_LENGTH)):
        raise ArtifactIOError(f"{TYPICAL_PATTERN_CSV} must list indices 0..{PATTERN_LENGTH - 1}", "read", TYPICAL_PATTERN_CSV)
    try:
        return TypicalPattern(
            values=tuple(float(v) for v in frame["mos"]),
            n_sessions_aggregated=int(frame["n_sessions"].iloc[0]),
        )
    except (ValidationError, KeyError) as e:
        raise ArtifactIOError(f"invalid {TYPICAL_PATTERN_CSV}: {e}", "read", TYPICAL_PATTERN_CSV, e) from e


def load_predictions(store: ArtifactStore) -> pd.DataFrame:
    """Out-of-fold predictions with columns session_id, mos_index, mos, predicted."""
    return store.load_frame(PREDICTIONS_CSV, dtype={SESSION_ID_COLUMN: str})


def load_mos_model(store: ArtifactStore) -> mos_predictor.Model:
    return mos_predictor.model_from_dict(store.load_json(MOS_MODEL_JSON))


def predictions_frame(matrix: FeatureMatrix, predicted: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({
        SESSION_ID_COLUMN: matrix.session_ids,
        "mos_index": matrix.mos_index,
        "mos": matrix.y,
        "predicted": predicted,
    })
