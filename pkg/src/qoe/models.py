"""
Pydantic models for the virtual drive test QoE pipeline.

This module defines the immutable records that flow between the pipeline
stages: measurement samples and sessions, supervised feature rows, MOS
sequences and patterns, and the evaluation and explanation reports.
"""

from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..core.constants import (
    FEATURE_NAMES,
    KPI_NAMES,
    MIN_MOS_SAMPLES,
    PATTERN_LENGTH,
    SESSION_DURATION_CAP_S,
    kpi_range_message,
    validate_kpi_value,
    validate_mos_value,
    VALIDATION_ERROR_MESSAGES,
)

FROZEN = ConfigDict(frozen=True, extra="forbid")


# Measurement records
class KpiSample(BaseModel):
    """One timestamped radio measurement; any subset of KPIs may be present."""

    model_config = FROZEN

    t: float = Field(..., ge=0.0, le=SESSION_DURATION_CAP_S)
    rsrp: Optional[float] = None
    rsrq: Optional[float] = None
    snr: Optional[float] = None
    prb: Optional[float] = None

    @model_validator(mode="after")
    def validate_ranges(self) -> "KpiSample":
        """Validate every present KPI against its range."""
        for kpi in KPI_NAMES:
            if not validate_kpi_value(kpi, getattr(self, kpi)):
                raise ValueError(kpi_range_message(kpi))
        return self

    def value(self, kpi: str) -> Optional[float]:
        return getattr(self, kpi)


class MosSample(BaseModel):
    """One MOS estimate on the 1-5 scale."""

    model_config = FROZEN

    t: float = Field(..., ge=0.0, le=SESSION_DURATION_CAP_S)
    mos: float

    @field_validator("mos")
    @classmethod
    def validate_mos(cls, v: float) -> float:
        """Validate mos field."""
        if not validate_mos_value(v):
            raise ValueError(VALIDATION_ERROR_MESSAGES["mos_range"])
        return v


class Session(BaseModel):
    """
    A benchmark video session of at most 60 s.

    Both sample lists are sorted by time; MOS timestamps strictly increase.
    """

    model_config = FROZEN

    id: str = Field(..., min_length=1)
    kpi: Tuple[KpiSample, ...] = ()
    mos: Tuple[MosSample, ...] = ()
    meta: Dict[str, str] = Field(default_factory=dict)

    @field_validator("kpi")
    @classmethod
    def validate_kpi_order(cls, v: Tuple[KpiSample, ...]) -> Tuple[KpiSample, ...]:
        if any(b.t < a.t for a, b in zip(v, v[1:])):
            raise ValueError(VALIDATION_ERROR_MESSAGES["kpi_order"])
        return v

    @field_validator("mos")
    @classmethod
    def validate_mos_order(cls, v: Tuple[MosSample, ...]) -> Tuple[MosSample, ...]:
        if any(b.t <= a.t for a, b in zip(v, v[1:])):
            raise ValueError(VALIDATION_ERROR_MESSAGES["mos_order"])
        return v

    @property
    def n_mos(self) -> int:
        return len(self.mos)

    @property
    def duration(self) -> float:
        """Latest timestamp over both series."""
        times = [s.t for s in self.kpi] + [s.t for s in self.mos]
        return max(times) if times else 0.0

    def is_eligible(self, min_mos_samples: int = MIN_MOS_SAMPLES) -> bool:
        """A session is model-eligible with at least 12 MOS samples."""
        return self.n_mos >= min_mos_samples

    def kpi_times(self) -> np.ndarray:
        return np.array([s.t for s in self.kpi], dtype=float)

    def kpi_values(self, kpi: str) -> np.ndarray:
        """KPI series with NaN marking absent values."""
        return np.array([np.nan if s.value(kpi) is None else s.value(kpi) for s in self.kpi], dtype=float)

    def mos_times(self) -> np.ndarray:
        return np.array([s.t for s in self.mos], dtype=float)

    def mos_values(self) -> np.ndarray:
        return np.array([s.mos for s in self.mos], dtype=float)


class Dataset(BaseModel):
    """Ordered collection of sessions with a provenance descriptor."""

    model_config = FROZEN

    sessions: Tuple[Session, ...] = ()
    provenance: str = ""

    @field_validator("sessions")
    @classmethod
    def validate_unique_ids(cls, v: Tuple[Session, ...]) -> Tuple[Session, ...]:
        seen = set()
        for session in v:
            if session.id in seen:
                raise ValueError(f"{VALIDATION_ERROR_MESSAGES['duplicate_session']}: {session.id}")
            seen.add(session.id)
        return v

    def __len__(self) -> int:
        return len(self.sessions)

    def session_ids(self) -> List[str]:
        return [s.id for s in self.sessions]

    def by_id(self) -> Dict[str, Session]:
        return {s.id: s for s in self.sessions}

    def summary(self, min_mos_samples: int = MIN_MOS_SAMPLES) -> Dict[str, object]:
        """
        Per-dataset counts.

        Returns:
            Dictionary with session, eligible-session, KPI-row and MOS-row
            counts plus the scenario tag histogram
        """
        scenarios: Dict[str, int] = {}
        for session in self.sessions:
            tag = session.meta.get("scenario")
            if tag is not None:
                scenarios[tag] = scenarios.get(tag, 0) + 1
        return {
            "n_sessions": len(self.sessions),
            "n_eligible": sum(1 for s in self.sessions if s.is_eligible(min_mos_samples)),
            "n_kpi_rows": sum(len(s.kpi) for s in self.sessions),
            "n_mos_rows": sum(len(s.mos) for s in self.sessions),
            "scenarios": dict(sorted(scenarios.items())),
            "provenance": self.provenance,
        }


class RowRejection(BaseModel):
    model_config = FROZEN

    line: int
    session_id: Optional[str] = None
    reason: str


class IngestReport(BaseModel):
    """Row accounting for one CSV ingestion; accepted + rejected = total."""

    model_config = FROZEN

    source: str
    total_rows: int
    accepted_rows: int
    rejected_rows: int
    n_sessions: int
    rejections: Tuple[RowRejection, ...] = ()

    @model_validator(mode="after")
    def validate_totals(self) -> "IngestReport":
        if self.accepted_rows + self.rejected_rows != self.total_rows:
            raise ValueError("accepted + rejected must equal total rows")
        return self


# Supervised examples
class FeatureRow(BaseModel):
    """One supervised example: 14 engineered features and the target MOS."""

    model_config = FROZEN

    session_id: str
    mos_index: int = Field(..., ge=0)
    sess_time: float = Field(..., gt=0.0)
    block_len: float = Field(..., gt=0.0)
    rsrp_c: float
    rsrp_b: float
    rsrp_s: float
    rsrq_c: float
    rsrq_b: float
    rsrq_s: float
    snr_c: float
    snr_b: float
    snr_s: float
    prb_c: float
    prb_b: float
    prb_s: float
    mos: float

    @model_validator(mode="after")
    def validate_temporal(self) -> "FeatureRow":
        """sess_time >= block_len, with equality on the first row."""
        if self.block_len > self.sess_time + 1e-9:
            raise ValueError("block_len must not exceed sess_time")
        return self

    def features(self) -> List[float]:
        """Feature values in the fixed feature order."""
        return [getattr(self, name) for name in FEATURE_NAMES]


class FeatureReport(BaseModel):
    model_config = FROZEN

    n_sessions: int
    n_rows: int
    n_dropped: int
    dropped_per_session: Dict[str, int] = Field(default_factory=dict)
    excluded_constant_columns: Tuple[str, ...] = ()


# Pattern recognition
class MosSequence(BaseModel):
    """Fixed-length MOS input of the autoencoder."""

    model_config = FROZEN

    values: Tuple[float, ...]
    valid_len: int = Field(..., ge=1, le=PATTERN_LENGTH)
    session_id: str

    @field_validator("values")
    @classmethod
    def validate_length(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if len(v) != PATTERN_LENGTH:
            raise ValueError(f"sequence must have {PATTERN_LENGTH} values")
        return v

    @model_validator(mode="after")
    def validate_valid_range(self) -> "MosSequence":
        if any(not validate_mos_value(v) for v in self.values[: self.valid_len]):
            raise ValueError(VALIDATION_ERROR_MESSAGES["mos_range"])
        return self

    def mask(self) -> np.ndarray:
        """1.0 on valid positions, 0.0 on padding."""
        m = np.zeros(PATTERN_LENGTH)
        m[: self.valid_len] = 1.0
        return m


class TypicalPattern(BaseModel):
    model_config = FROZEN

    values: Tuple[float, ...]
    n_sessions_aggregated: int = Field(..., ge=1)

    @field_validator("values")
    @classmethod
    def validate_values(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if len(v) != PATTERN_LENGTH:
            raise ValueError(f"pattern must have {PATTERN_LENGTH} values")
        if any(not validate_mos_value(x) for x in v):
            raise ValueError(VALIDATION_ERROR_MESSAGES["mos_range"])
        return v


class TrainingEpoch(BaseModel):
    model_config = FROZEN

    epoch: int
    train_mse: float
    val_mse: float


# Prediction
class TrialRecord(BaseModel):
    model_config = FROZEN

    trial: int
    seed: Tuple[int, int]
    r2: Optional[float] = None  # undefined when the test split has constant MOS
    mse_per_session: float
    n_train_sessions: int
    n_test_sessions: int


class EvalReport(BaseModel):
    """Trial-averaged regression metrics with normal-approximation 95% CIs."""

    model_config = FROZEN

    learner: str
    n_trials: int
    r2: float
    r2_ci: Tuple[float, float]
    mse_per_session: float
    mse_per_session_ci: Tuple[float, float]
    trials: Tuple[TrialRecord, ...]
    n_r2_undefined: int = Field(0, ge=0)


# Detection
class SessionScore(BaseModel):
    model_config = FROZEN

    session_id: str
    predicted_mse: float = Field(..., ge=0.0)
    actual_mse: float = Field(..., ge=0.0)
    aligned_len: int = Field(..., ge=1, le=PATTERN_LENGTH)


class SessionLabel(BaseModel):
    model_config = FROZEN

    session_id: str
    predicted: bool
    actual: bool


class ConfusionCounts(BaseModel):
    """
    Confusion counts with anomalies as positives.

    Precision, recall and F1 are None where their denominator is zero.
    """

    model_config = FROZEN

    tp: int
    fp: int
    fn: int
    tn: int
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None


class SweepPoint(BaseModel):
    model_config = FROZEN

    threshold: float
    precision: Optional[float] = None
    recall: float
    f1: float
    n_flagged: int


class DetectionReport(BaseModel):
    model_config = FROZEN

    percentile: float
    threshold: float
    threshold_actual: float
    labels: Tuple[SessionLabel, ...]
    confusion: ConfusionCounts
    sweep: Tuple[SweepPoint, ...]
    max_f1: SweepPoint


class DetectionTrial(BaseModel):
    model_config = FROZEN

    trial: int
    max_f1: float
    threshold: float
    n_test_sessions: int
    n_actual_positive: int


class DetectionTrialsReport(BaseModel):
    model_config = FROZEN

    n_trials: int
    n_skipped: int
    mean_max_f1: float
    max_f1_ci: Tuple[float, float]
    trials: Tuple[DetectionTrial, ...]


# Explanation
class Attribution(BaseModel):
    """Additive attribution: base_value + sum(contributions) = prediction."""

    model_config = FROZEN

    row_id: str
    base_value: float
    prediction: float
    features: Tuple[str, ...]
    values: Tuple[float, ...]
    contributions: Tuple[float, ...]

    def total(self) -> float:
        return self.base_value + float(np.sum(self.contributions))

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.features, self.contributions))


class PathNode(BaseModel):
    model_config = FROZEN

    node_id: int
    feature: str
    threshold: float
    value: float
    direction: str
    n_samples: int
    mean_target: float
    histogram: Tuple[int, ...] = ()


class DecisionPath(BaseModel):
    """Root-to-leaf route of one row; nodes are internal nodes only."""

    model_config = FROZEN

    nodes: Tuple[PathNode, ...]
    leaf_id: int
    leaf_prediction: float
    leaf_n_samples: int
    leaf_histogram: Tuple[int, ...] = ()
    actual: Optional[float] = None


class CurvePoint(BaseModel):
    model_config = FROZEN

    t: int
    session_class: str
    mean: float
    lo: float
    hi: float
    n: int
