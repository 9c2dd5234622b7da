"""
Session-level anomaly detection against the typical MOS pattern.

A session's score is the mean squared deviation of its MOS trajectory from
the typical pattern, compared index by index over the first 15 MOS samples.
Sessions scoring above the percentile threshold of predicted-MOS scores are
flagged; actual labels come from the true-MOS scores and a separate
threshold. Nothing here reads generator scenario tags.
"""

import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..core.artifacts import OperationContext
from ..core.config import DetectorConfig, PredictorConfig
from ..core.constants import CSV_FLOAT_FORMAT, MIN_MOS_SAMPLES, PATTERN_LENGTH, SWEEP_CSV_COLUMNS
from ..core.exceptions import ArtifactIOError, DataValidationError, InsufficientDataError
from .feature_pipeline import FeatureMatrix
from .models import (
    ConfusionCounts,
    Dataset,
    DetectionReport,
    DetectionTrial,
    DetectionTrialsReport,
    Session,
    SessionLabel,
    SessionScore,
    SweepPoint,
    TypicalPattern,
)
from .mos_predictor import LearnerSpec, fit_learner, normal_ci, predict_matrix, session_split

logger = logging.getLogger(__name__)


def _aligned(series: Sequence[float]) -> np.ndarray:
    """First 15 values, NaN-padded to the pattern length."""
    values = np.asarray(series, dtype=float)[:PATTERN_LENGTH]
    return np.concatenate([values, np.full(PATTERN_LENGTH - len(values), np.nan)])


def session_mse(mos_series: Sequence[float], pattern: TypicalPattern) -> float:
    """
    Mean squared deviation from the pattern by MOS index.

    The i-th MOS value is compared with the i-th pattern point over the
    first min(len, 15) indices; NaN entries are skipped.

    Raises:
        InsufficientDataError: If fewer than 12 indices can be compared
    """
    values = _aligned(mos_series)
    mask = ~np.isnan(values)
    aligned_len = int(mask.sum())
    if aligned_len < MIN_MOS_SAMPLES:
        raise InsufficientDataError(
            f"session_mse needs {MIN_MOS_SAMPLES} aligned points, got {aligned_len}",
            required=MIN_MOS_SAMPLES,
            available=aligned_len,
        )
    pattern_values = np.asarray(pattern.values, dtype=float)
    return float(np.mean((values[mask] - pattern_values[mask]) ** 2))


def percentile_threshold(scores: Sequence[float], q: float = 0.90) -> float:
    """
    Linear-interpolation percentile of the scores.

    Raises:
        InsufficientDataError: If scores is empty
        DataValidationError: If q is outside [0, 1]
    """
    if len(scores) == 0:
        raise InsufficientDataError("percentile of an empty score list", required=1, available=0)
    if not 0.0 <= q <= 1.0:
        raise DataValidationError("percentile q must lie in [0, 1]", field="q", value=q)
    return float(np.percentile(np.asarray(scores, dtype=float), q * 100.0, method="linear"))


def label_actual(
    scores: Sequence[SessionScore],
    threshold_actual: float = 0.5,
    quantile: Optional[float] = None
) -> Dict[str, bool]:
    """
    Actual-anomaly labels from true-MOS scores.

    A session is actually anomalous iff its actual_mse exceeds the threshold.
    When quantile is given the threshold is that percentile of the actual
    scores instead.
    """
    if quantile is not None:
        threshold_actual = percentile_threshold([s.actual_mse for s in scores], quantile)
    return {s.session_id: s.actual_mse > threshold_actual for s in scores}


def confusion(predicted: Mapping[str, bool], actual: Mapping[str, bool]) -> ConfusionCounts:
    """
    Confusion counts with anomalies as positives.

    Raises:
        DataValidationError: If the two label sets cover different sessions
    """
    if set(predicted) != set(actual):
        raise DataValidationError(
            "predicted and actual labels cover different sessions",
            field="labels",
            value=sorted(set(predicted) ^ set(actual))[:10],
        )
    tp = sum(1 for sid, flag in predicted.items() if flag and actual[sid])
    fp = sum(1 for sid, flag in predicted.items() if flag and not actual[sid])
    fn = sum(1 for sid, flag in predicted.items() if not flag and actual[sid])
    tn = len(predicted) - tp - fp - fn
    return ConfusionCounts(
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        precision=tp / (tp + fp) if tp + fp else None,
        recall=tp / (tp + fn) if tp + fn else None,
        f1=2 * tp / (2 * tp + fp + fn) if tp + fp + fn else None,
    )


def default_grid(scores: Sequence[float]) -> np.ndarray:
    """One point just below the minimum score, then every distinct score."""
    unique = np.unique(np.asarray(scores, dtype=float))
    return np.concatenate([[np.nextafter(unique[0], -np.inf)], unique])


def threshold_sweep(
    scores: Sequence[float],
    actual: Sequence[bool],
    grid: Optional[Sequence[float]] = None
) -> Tuple[List[SweepPoint], SweepPoint]:
    """
    Precision, recall and F1 for each threshold; a session is flagged when its score exceeds the threshold.

    Args:
        scores: Predicted-MOS session scores
        actual: Actual labels in the same order
        grid: Thresholds; default_grid(scores) when None

    Returns:
        (sweep points in ascending threshold order, the max-F1 point with ties to the lowest threshold)

    Raises:
        DataValidationError: If there are no actual positives, lengths differ or the grid does not cover the scores
    """
    scores = np.asarray(scores, dtype=float)
    actual = np.asarray(actual, dtype=bool)
    if len(scores) == 0 or len(scores) != len(actual):
        raise DataValidationError("scores and labels must be non-empty and of equal length", field="scores")
    n_positive = int(actual.sum())
    if n_positive == 0:
        raise DataValidationError(
            "no actual positives: recall is undefined",
            field="actual",
            validation_rule="at least one actual anomaly",
        )
    grid = default_grid(scores) if grid is None else np.sort(np.asarray(grid, dtype=float))
    if grid[0] >= scores.min() or grid[-1] < scores.max():
        raise DataValidationError("threshold grid must cover [min score, max score]", field="grid")

    points: List[SweepPoint] = []
    for threshold in grid:
        flagged = scores > threshold
        tp = int(np.sum(flagged & actual))
        n_flagged = int(flagged.sum())
        fp = n_flagged - tp
        fn = n_positive - tp
        points.append(SweepPoint(
            threshold=float(threshold),
            precision=tp / n_flagged if n_flagged else None,
            recall=tp / n_positive,
            f1=2 * tp / (2 * tp + fp + fn),
            n_flagged=n_flagged,
        ))
    best = max(points, key=lambda p: p.f1)
    return points, best


def series_by_session(session_ids: Sequence[str], mos_index: Sequence[int], values: Sequence[float]) -> Dict[str, np.ndarray]:
    """Per-row values regrouped as 15-long series by MOS index (NaN where missing)."""
    series: Dict[str, np.ndarray] = {}
    for sid, index, value in zip(session_ids, mos_index, values):
        if index < PATTERN_LENGTH:
            series.setdefault(sid, np.full(PATTERN_LENGTH, np.nan))[index] = value
    return series


def score_sessions(
    sessions: Sequence[Session],
    predicted: Mapping[str, Sequence[float]],
    pattern: TypicalPattern
) -> List[SessionScore]:
    """
    Predicted and actual scores for every session with a prediction.

    Only indices where both a prediction and a true MOS exist are compared.
    Sessions with fewer than 12 such indices are skipped with a warning.
    """
    scores: List[SessionScore] = []
    skipped: List[str] = []
    for s in sessions:
        if s.id not in predicted:
            continue
        pred = _aligned(predicted[s.id])
        true = _aligned(s.mos_values())
        mask = ~np.isnan(pred) & ~np.isnan(true)
        if mask.sum() < MIN_MOS_SAMPLES:
            skipped.append(s.id)
            continue
        scores.append(SessionScore(
            session_id=s.id,
            predicted_mse=session_mse(np.where(mask, pred, np.nan), pattern),
            actual_mse=session_mse(np.where(mask, true, np.nan), pattern),
            aligned_len=int(mask.sum()),
        ))
    if skipped:
        logger.warning(f"Skipped {len(skipped)} sessions with fewer than {MIN_MOS_SAMPLES} aligned MOS points")
    return scores


def detect(
    scores: Sequence[SessionScore],
    q: float = 0.90,
    threshold_actual: float = 0.5,
    actual_quantile: Optional[float] = None
) -> DetectionReport:
    """Percentile-threshold detection with confusion counts and the full sweep."""
    context = OperationContext("detect", f"{len(scores)} sessions")
    context.log_start("Classifying sessions", percentile=q)
    predicted_scores = [s.predicted_mse for s in scores]
    threshold = percentile_threshold(predicted_scores, q)
    if actual_quantile is not None:
        threshold_actual = percentile_threshold([s.actual_mse for s in scores], actual_quantile)
    actual = label_actual(scores, threshold_actual)
    predicted = {s.session_id: s.predicted_mse > threshold for s in scores}
    counts = confusion(predicted, actual)
    sweep, best = threshold_sweep(predicted_scores, [actual[s.session_id] for s in scores])
    context.log_success(
        f"Flagged {sum(predicted.values())} sessions",
        n_actual=sum(actual.values()),
        tp=counts.tp,
        max_f1=best.f1,
    )
    return DetectionReport(
        percentile=q,
        threshold=threshold,
        threshold_actual=threshold_actual,
        labels=tuple(SessionLabel(session_id=s.session_id, predicted=predicted[s.session_id], actual=actual[s.session_id]) for s in scores),
        confusion=counts,
        sweep=tuple(sweep),
        max_f1=best,
    )


def run_detection_trials(
    matrix: FeatureMatrix,
    dataset: Dataset,
    pattern: TypicalPattern,
    spec: LearnerSpec,
    n_trials: int = 10,
    seed: int = 0,
    detector: Optional[DetectorConfig] = None,
    predictor: Optional[PredictorConfig] = None
) -> DetectionTrialsReport:
    """
    Repeat split, train, predict, sweep and max-F1 over seeded trials.

    Trials whose test split holds no actual anomaly are skipped and counted.

    Raises:
        InsufficientDataError: If fewer than 2 trials complete
    """
    detector = detector or DetectorConfig()
    predictor = predictor or PredictorConfig()
    context = OperationContext("run_detection_trials", spec.name)
    context.log_start(f"Running {n_trials} detection trials")
    sessions = dataset.by_id()
    trials: List[DetectionTrial] = []
    skipped = 0
    for trial in range(n_trials):
        train_mask, test_mask = session_split(matrix.session_ids, predictor.split_ratio, np.random.default_rng([seed, trial]))
        test = matrix.subset(test_mask)
        model = fit_learner(spec, matrix.subset(train_mask), seed + trial, predictor)
        predicted = series_by_session(test.session_ids, test.mos_index, predict_matrix(model, test))
        scores = score_sessions([sessions[sid] for sid in sorted(predicted) if sid in sessions], predicted, pattern)
        actual = label_actual(scores, detector.actual_threshold, detector.actual_quantile)
        n_positive = sum(actual.values())
        if n_positive == 0:
            skipped += 1
            context.log_warning(f"Trial {trial} skipped: no actual anomalies in the test split")
            continue
        _, best = threshold_sweep([s.predicted_mse for s in scores], [actual[s.session_id] for s in scores])
        trials.append(DetectionTrial(
            trial=trial,
            max_f1=best.f1,
            threshold=best.threshold,
            n_test_sessions=len(scores),
            n_actual_positive=n_positive,
        ))
    if len(trials) < 2:
        raise InsufficientDataError("fewer than 2 detection trials had actual anomalies", required=2, available=len(trials))
    mean, ci = normal_ci([t.max_f1 for t in trials])
    context.log_success(f"Mean max-F1 {mean:.4f}", n_completed=len(trials), n_skipped=skipped)
    return DetectionTrialsReport(n_trials=n_trials, n_skipped=skipped, mean_max_f1=mean, max_f1_ci=ci, trials=tuple(trials))


def anomalous_trajectories(
    report: DetectionReport,
    sessions: Mapping[str, Session],
    predicted: Mapping[str, Sequence[float]],
    pattern: TypicalPattern
) -> pd.DataFrame:
    """Predicted, typical and actual MOS by index for every flagged session."""
    records = []
    for label in report.labels:
        if not label.predicted:
            continue
        pred = _aligned(predicted[label.session_id])
        true = _aligned(sessions[label.session_id].mos_values())
        for index in range(PATTERN_LENGTH):
            if np.isnan(pred[index]) and np.isnan(true[index]):
                continue
            records.append({
                "session_id": label.session_id,
                "mos_index": index,
                "predicted": pred[index],
                "typical": pattern.values[index],
                "actual": true[index],
            })
    return pd.DataFrame.from_records(records, columns=["session_id", "mos_index", "predicted", "typical", "actual"])


def scores_frame(scores: Sequence[SessionScore]) -> pd.DataFrame:
    return pd.DataFrame([s.model_dump() for s in scores], columns=["session_id", "predicted_mse", "actual_mse", "aligned_len"])


def sweep_frame(sweep: Sequence[SweepPoint]) -> pd.DataFrame:
    return pd.DataFrame([{key: p.model_dump()[key] for key in SWEEP_CSV_COLUMNS} for p in sweep], columns=SWEEP_CSV_COLUMNS)


def write_sweep_csv(report: DetectionReport, path: Path) -> None:
    """
    Export the threshold sweep as CSV; undefined precision is an empty cell.

    Raises:
        ArtifactIOError: If the path cannot be written
    """
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(sweep_frame(report.sweep).to_csv(index=False, float_format=CSV_FLOAT_FORMAT, na_rep="", lineterminator="\n"))
    except OSError as e:
        raise ArtifactIOError(f"Failed to write {path}: {e}", "write", str(path), e) from e
