"""
Constants and validation ranges for the virtual drive test QoE pipeline.

This module contains the KPI and scenario enums, measurement ranges, fixed
column orders for every CSV interface, and the structural constants of the
models (pattern length, bottleneck width, eligibility threshold).
"""

from enum import Enum
from typing import Dict, List, Optional, Tuple


class Kpi(str, Enum):
    """Radio KPIs measured once per second."""
    RSRP = "rsrp"
    RSRQ = "rsrq"
    SNR = "snr"
    PRB = "prb"


class Scenario(str, Enum):
    """Ground-truth scenario tags attached by the synthetic generator."""
    NORMAL = "normal"
    ANOMALOUS = "anomalous"


class AnomalyShape(str, Enum):
    """SNR trajectory shapes used for generated anomalous sessions."""
    LATE_FADE = "late_fade"
    EARLY_FADE = "early_fade"
    OSCILLATION = "oscillation"


class LearnerKind(str, Enum):
    """Regression learners available to the MOS predictor."""
    FOREST = "forest"
    BOOSTED = "boosted"
    TREE = "tree"


class SessionClass(str, Enum):
    """Class names used in root-cause curves."""
    NORMAL = "normal"
    ABNORMAL = "abnormal"


KPI_NAMES: List[str] = [kpi.value for kpi in Kpi]

# Measurement ranges (inclusive). SNR bounds are a validation choice.
KPI_RANGES: Dict[str, Tuple[float, float]] = {
    Kpi.RSRP.value: (-140.0, -44.0),
    Kpi.RSRQ.value: (-19.5, -3.0),
    Kpi.SNR.value: (-20.0, 40.0),
    Kpi.PRB.value: (0.0, float("inf")),
}

KPI_UNITS: Dict[str, str] = {
    Kpi.RSRP.value: "dBm",
    Kpi.RSRQ.value: "dB",
    Kpi.SNR.value: "dB",
    Kpi.PRB.value: "count",
}

MOS_MIN = 1.0
MOS_MAX = 5.0

SESSION_DURATION_CAP_S = 60.0
MIN_MOS_SAMPLES = 12
PATTERN_LENGTH = 15
BOTTLENECK_WIDTH = 6
ENCODER_WIDTH = 15

# Decimal precision used for every CSV float cell.
CSV_DECIMALS = 6
CSV_FLOAT_FORMAT = f"%.{CSV_DECIMALS}f"

# Trace CSV interface
SESSION_ID_COLUMN = "session_id"
TIME_COLUMN = "t"
MOS_COLUMN = "mos"
TRACE_COLUMNS: List[str] = [SESSION_ID_COLUMN, TIME_COLUMN] + KPI_NAMES + [MOS_COLUMN]

# Feature variants: c = latest sample, b = block since previous MOS, s = session so far
FEATURE_VARIANTS: List[str] = ["c", "b", "s"]
TEMPORAL_FEATURES: List[str] = ["sess_time", "block_len"]
FEATURE_NAMES: List[str] = TEMPORAL_FEATURES + [
    f"{kpi}_{variant}" for kpi in KPI_NAMES for variant in FEATURE_VARIANTS
]
FEATURE_CSV_COLUMNS: List[str] = [SESSION_ID_COLUMN, "mos_index"] + FEATURE_NAMES + [MOS_COLUMN]

FEATURE_DISPLAY_NAMES: Dict[str, str] = {
    "sess_time": "Session Time",
    "block_len": "Block Length",
    **{f"{kpi}_s": f"Session {kpi.upper()}" for kpi in KPI_NAMES},
    **{f"{kpi}_b": f"Block {kpi.upper()}" for kpi in KPI_NAMES},
    **{f"{kpi}_c": f"Instantaneous {kpi.upper()}" for kpi in KPI_NAMES},
}

# Other CSV interfaces
SWEEP_CSV_COLUMNS: List[str] = ["threshold", "precision", "recall", "f1"]
CURVE_CSV_COLUMNS: List[str] = ["t", "class", "mean", "lo", "hi"]
ATTRIBUTION_CSV_COLUMNS: List[str] = ["row_id", "feature", "value", "contribution"]

# Normal-approximation 95% confidence multiplier
CI_Z = 1.96

# Histogram bins for per-node target distributions (MOS scale)
NODE_HISTOGRAM_EDGES: List[float] = [MOS_MIN + 0.25 * i for i in range(17)]

ARTIFACT_FORMAT_VERSION = 1


def get_valid_kpis() -> List[str]:
    """Get list of valid KPI column names."""
    return list(KPI_NAMES)


def get_valid_scenarios() -> List[str]:
    """Get list of valid generator scenario tags."""
    return [scenario.value for scenario in Scenario]


def get_valid_learners() -> List[str]:
    """Get list of valid learner kinds."""
    return [kind.value for kind in LearnerKind]


def kpi_range_message(kpi: str) -> str:
    """Rejection reason used when a KPI value is outside its range."""
    low, high = KPI_RANGES[kpi]
    if high == float("inf"):
        return f"{kpi} must be >= {low:g}"
    return f"{kpi} out of [{low:g},{high:g}]"


def validate_kpi_value(kpi: str, value: Optional[float]) -> bool:
    """
    Check a KPI value against its measurement range.

    Args:
        kpi: KPI column name
        value: Measured value, or None when absent

    Returns:
        True if the value is absent or inside the range
    """
    if value is None:
        return True
    low, high = KPI_RANGES[kpi]
    return low <= value <= high


def validate_mos_value(value: float) -> bool:
    """Check a MOS value against the 1-5 scale."""
    return MOS_MIN <= value <= MOS_MAX


VALIDATION_ERROR_MESSAGES = {
    "mos_range": f"mos out of [{MOS_MIN:g},{MOS_MAX:g}]",
    "negative_time": "t must be non-negative",
    "time_cap": f"t exceeds session duration cap of {SESSION_DURATION_CAP_S:g} s",
    "mos_order": "mos timestamp not increasing",
    "kpi_order": "kpi samples not sorted by t",
    "empty_row": "empty row",
    "not_a_number": "{column} is not a number",
    "duplicate_session": "duplicate session id",
    "missing_column": "schema column missing: {column}",
    "no_sessions": "zero valid sessions",
}
