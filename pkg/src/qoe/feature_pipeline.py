"""
Feature engineering for MOS prediction.

Every MOS sample of a session becomes one FeatureRow with two temporal
features (session time and block length) and three aggregates per KPI: the
latest value (``_c``), the mean over the block since the previous MOS sample
(``_b``) and the running session mean (``_s``). Gaps are backward filled
before aggregation, but only inside the causal prefix of each MOS timestamp,
so no row ever reads a measurement taken after its MOS sample.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..core.artifacts import OperationContext
from ..core.constants import (
    CSV_FLOAT_FORMAT,
    FEATURE_CSV_COLUMNS,
    FEATURE_NAMES,
    KPI_NAMES,
    MOS_COLUMN,
    SESSION_ID_COLUMN,
)
from ..core.exceptions import ArtifactIOError, DataValidationError, InsufficientDataError
from .models import Dataset, FeatureReport, FeatureRow, KpiSample, Session

logger = logging.getLogger(__name__)


def backward_fill(kpi: Sequence[KpiSample]) -> List[KpiSample]:
    """
    Replace each absent KPI value with the next present value of that KPI.

    Trailing gaps stay absent. MOS is never filled.

    Args:
        kpi: Samples sorted by t

    Returns:
        Samples of the same length and timestamps
    """
    if not kpi:
        return []
    frame = pd.DataFrame(
        [[s.value(name) for name in KPI_NAMES] for s in kpi],
        columns=KPI_NAMES,
        dtype=float,
    ).bfill()
    filled = []
    for sample, values in zip(kpi, frame.itertuples(index=False)):
        row = {name: (None if np.isnan(v) else float(v)) for name, v in zip(KPI_NAMES, values)}
        filled.append(KpiSample.model_construct(t=sample.t, **row))
    return filled


def cumulative_mean(times: Sequence[float], values: Sequence[float], upto_t: float) -> Optional[float]:
    """
    Mean of the present values with t <= upto_t.

    Args:
        times: Sorted timestamps
        values: Values, NaN where absent
        upto_t: Inclusive horizon

    Returns:
        The mean, or None when no value is present by upto_t
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = (times <= upto_t) & ~np.isnan(values)
    if not mask.any():
        return None
    return float(np.mean(values[mask]))


def block_mean(times: Sequence[float], values: Sequence[float], t_prev: float, t_now: float) -> Optional[float]:
    """
    Mean of the present values with t in (t_prev, t_now].

    Raises:
        DataValidationError: If t_prev >= t_now
    """
    if t_prev >= t_now:
        raise DataValidationError(
            f"block start {t_prev} must precede block end {t_now}",
            field="t_prev",
            value=t_prev,
            validation_rule="t_prev < t_now",
        )
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = (times > t_prev) & (times <= t_now) & ~np.isnan(values)
    if not mask.any():
        return None
    return float(np.mean(values[mask]))


def fill_plan(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Whole-series backward fill plus the index of the sample each fill came from."""
    series = pd.Series(values)
    source = pd.Series(np.where(np.isnan(values), np.nan, np.arange(len(values), dtype=float))).bfill()
    return series.bfill().to_numpy(dtype=float), source.to_numpy(dtype=float)


def causal_prefix(plan: Tuple[np.ndarray, np.ndarray], prefix_len: int) -> np.ndarray:
    """First prefix_len values, filled only from samples inside the prefix."""
    filled, source = plan
    return np.where(source[:prefix_len] < prefix_len, filled[:prefix_len], np.nan)


def _session_rows(session: Session) -> Tuple[List[FeatureRow], int]:
    """Feature rows of one session and the number of dropped MOS samples."""
    kpi_times = session.kpi_times()
    plans = {name: fill_plan(session.kpi_values(name)) for name in KPI_NAMES}
    mos_times = session.mos_times()
    rows: List[FeatureRow] = []
    dropped = 0

    for index, (t_now, sample) in enumerate(zip(mos_times, session.mos)):
        t_prev = float(mos_times[index - 1]) if index > 0 else None
        if t_now <= 0:
            dropped += 1
            continue
        prefix_len = int(np.searchsorted(kpi_times, t_now, side="right"))
        prefix_times = kpi_times[:prefix_len]
        features: Dict[str, Optional[float]] = {
            "sess_time": float(t_now),
            "block_len": float(t_now - t_prev) if t_prev is not None else float(t_now),
        }
        for name in KPI_NAMES:
            prefix = causal_prefix(plans[name], prefix_len)
            present = prefix[~np.isnan(prefix)]
            session_mean = cumulative_mean(prefix_times, prefix, t_now)
            features[f"{name}_c"] = float(present[-1]) if present.size else None
            features[f"{name}_s"] = session_mean
            features[f"{name}_b"] = session_mean if t_prev is None else block_mean(prefix_times, prefix, t_prev, t_now)

        if any(value is None for value in features.values()):
            dropped += 1
            continue
        rows.append(FeatureRow(session_id=session.id, mos_index=index, mos=sample.mos, **features))
    return rows, dropped


def build_rows_with_report(d: Dataset, n_workers: int = 1) -> Tuple[List[FeatureRow], FeatureReport]:
    """
    Build one FeatureRow per MOS sample and account for dropped rows.

    Args:
        d: Dataset, normally already filtered to model-eligible sessions
        n_workers: Sessions processed in parallel when > 1

    Returns:
        Rows in session order, then MOS order, and the FeatureReport
    """
    context = OperationContext("build_rows", d.provenance or "dataset")
    context.log_start(f"Building feature rows for {len(d.sessions)} sessions")
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_session_rows, d.sessions))
    else:
        results = [_session_rows(s) for s in d.sessions]

    rows: List[FeatureRow] = []
    dropped_per_session: Dict[str, int] = {}
    for session, (session_rows, dropped) in zip(d.sessions, results):
        rows.extend(session_rows)
        if dropped:
            dropped_per_session[session.id] = dropped
    n_dropped = sum(dropped_per_session.values())
    if n_dropped:
        context.log_warning(
            f"Dropped {n_dropped} rows with absent features",
            n_dropped=n_dropped,
            sessions_affected=len(dropped_per_session),
        )
    report = FeatureReport(
        n_sessions=len(d.sessions),
        n_rows=len(rows),
        n_dropped=n_dropped,
        dropped_per_session=dict(sorted(dropped_per_session.items())),
    )
    context.log_success(f"Built {len(rows)} feature rows", n_rows=len(rows))
    return rows, report


def build_rows(d: Dataset) -> List[FeatureRow]:
    """One FeatureRow per MOS sample; rows with absent features are dropped."""
    rows, _ = build_rows_with_report(d)
    return rows


@dataclass(frozen=True)
class FeatureMatrix:
    """Learner-ready arrays."""

    X: np.ndarray
    y: np.ndarray
    session_ids: np.ndarray
    mos_index: np.ndarray
    feature_names: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, mask: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(self.X[mask], self.y[mask], self.session_ids[mask], self.mos_index[mask], self.feature_names)


def to_matrix(rows: Sequence[FeatureRow], features: Optional[Sequence[str]] = None) -> FeatureMatrix:
    """
    Stack rows into (X, y) arrays.

    Args:
        rows: Feature rows
        features: Feature names to keep, in order (all 14 by default)

    Raises:
        DataValidationError: If a feature name is unknown
    """
    names = tuple(features or FEATURE_NAMES)
    unknown = [name for name in names if name not in FEATURE_NAMES]
    if unknown:
        raise DataValidationError(f"unknown features: {unknown}", field="features", value=unknown)
    X = np.array([[getattr(row, name) for name in names] for row in rows], dtype=float).reshape(len(rows), len(names))
    y = np.array([row.mos for row in rows], dtype=float)
    session_ids = np.array([row.session_id for row in rows], dtype=object)
    mos_index = np.array([row.mos_index for row in rows], dtype=int)
    return FeatureMatrix(X, y, session_ids, mos_index, names)


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation by the covariance over standard deviations formula."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    if denom == 0:
        raise DataValidationError("correlation undefined for a constant column", validation_rule="non-constant")
    return float(np.clip(np.sum(dx * dy) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class PearsonResult:
    columns: Tuple[str, ...]
    matrix: np.ndarray
    excluded: Tuple[str, ...]

    def frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.matrix, index=list(self.columns), columns=list(self.columns))
        frame.index.name = "feature"
        return frame


def pearson_matrix(rows: Sequence[FeatureRow]) -> PearsonResult:
    """
    Pearson correlation over the 14 features and MOS.

    Constant columns are excluded and reported.

    Raises:
        InsufficientDataError: If fewer than 2 rows are given
    """
    if len(rows) < 2:
        raise InsufficientDataError("pearson_matrix needs at least 2 rows", required=2, available=len(rows))
    names = list(FEATURE_NAMES) + [MOS_COLUMN]
    data = np.array([row.features() + [row.mos] for row in rows], dtype=float)
    constant = np.ptp(data, axis=0) == 0
    excluded = tuple(name for name, flag in zip(names, constant) if flag)
    if excluded:
        logger.warning(f"Excluding constant columns from Pearson matrix: {list(excluded)}")
    kept = [name for name, flag in zip(names, constant) if not flag]
    data = data[:, ~constant]
    if data.shape[1] == 0:
        return PearsonResult((), np.zeros((0, 0)), excluded)
    matrix = np.atleast_2d(np.corrcoef(data, rowvar=False))
    matrix = np.clip((matrix + matrix.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(matrix, 1.0)
    return PearsonResult(tuple(kept), matrix, excluded)


def feature_frame(rows: Sequence[FeatureRow]) -> pd.DataFrame:
    """Rows in the fixed CSV column order."""
    records = [row.model_dump() for row in rows]
    return pd.DataFrame.from_records(records, columns=FEATURE_CSV_COLUMNS)


def write_feature_csv(rows: Sequence[FeatureRow], path: Path) -> None:
    """
    Export rows as CSV.

    Raises:
        ArtifactIOError: If the path cannot be written
    """
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(feature_frame(rows).to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n"))
    except OSError as e:
        raise ArtifactIOError(f"Failed to write {path}: {e}", "write", str(path), e) from e


def read_feature_csv(path: Path) -> List[FeatureRow]:
    """
    Import rows written by write_feature_csv.

    Raises:
        ArtifactIOError: If the file cannot be read
        DataValidationError: If the header differs from the fixed column order
    """
    try:
        frame = pd.read_csv(path, dtype={SESSION_ID_COLUMN: str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ArtifactIOError(f"Failed to read {path}: {e}", "read", str(path), e) from e
    if list(frame.columns) != FEATURE_CSV_COLUMNS:
        raise DataValidationError("feature CSV header does not match the fixed column order", field="header", value=list(frame.columns))
    return [FeatureRow(**record) for record in frame.to_dict(orient="records")]
