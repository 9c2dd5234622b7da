"""Score sessions against the typical pattern and flag anomalies."""

import argparse
import logging
from typing import Any, Dict

from ...core.exceptions import InsufficientDataError
from ...qoe.anomaly_detector import (
    anomalous_trajectories,
    detect,
    run_detection_trials,
    score_sessions,
    scores_frame,
    series_by_session,
    write_sweep_csv,
)
from ...qoe.mos_predictor import LearnerSpec
from ..dependencies import (
    ANOMALOUS_TRAJECTORIES_CSV,
    DATASET_FILES,
    DETECT_STAGE,
    DETECTION_REPORT_JSON,
    DETECTION_TRIALS_JSON,
    FEATURES_CSV,
    PREDICTIONS_CSV,
    SESSION_SCORES_CSV,
    THRESHOLD_SWEEP_CSV,
    TYPICAL_PATTERN_CSV,
    PipelineContext,
    load_dataset,
    load_matrix,
    load_pattern,
    load_predictions,
)

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("detect", help="Flag anomalous sessions from predicted MOS")
    parser.set_defaults(handler=handle_detect)


def handle_detect(args: argparse.Namespace, context: PipelineContext) -> Dict[str, Any]:
    """
    Classify sessions with the percentile threshold and run the seeded detection trials.

    Detection trials that cannot complete are recorded as such instead of
    failing the stage.
    """
    inputs = context.require(DETECT_STAGE, DATASET_FILES + [TYPICAL_PATTERN_CSV, PREDICTIONS_CSV, FEATURES_CSV])
    config = context.config
    options = config.detector
    dataset = load_dataset(context.store)
    pattern = load_pattern(context.store)
    frame = load_predictions(context.store)
    predicted = series_by_session(frame["session_id"].tolist(), frame["mos_index"].tolist(), frame["predicted"].tolist())
    sessions = dataset.by_id()

    scores = score_sessions([sessions[sid] for sid in sorted(predicted) if sid in sessions], predicted, pattern)
    report = detect(scores, options.percentile, options.actual_threshold, options.actual_quantile)
    try:
        trials = run_detection_trials(
            load_matrix(context.store), dataset, pattern, LearnerSpec(kind=config.predictor.learner),
            options.n_trials, config.seeds.detector, options, config.predictor,
        )
        trials_document: Dict[str, Any] = {"completed": True, **trials.model_dump(mode="json")}
    except InsufficientDataError as e:
        logger.warning(f"Detection trials not reported: {e.message}")
        trials_document = {"completed": False, "reason": e.message}

    store = context.store
    store.save_frame(SESSION_SCORES_CSV, scores_frame(scores))
    store.save_json(DETECTION_REPORT_JSON, report.model_dump(mode="json"))
    write_sweep_csv(report, store.path(THRESHOLD_SWEEP_CSV))
    store.save_frame(ANOMALOUS_TRAJECTORIES_CSV, anomalous_trajectories(report, sessions, predicted, pattern))
    store.save_json(DETECTION_TRIALS_JSON, trials_document)
    outputs = [SESSION_SCORES_CSV, DETECTION_REPORT_JSON, THRESHOLD_SWEEP_CSV, ANOMALOUS_TRAJECTORIES_CSV, DETECTION_TRIALS_JSON]
    context.finish(DETECT_STAGE, outputs, inputs)
    return {
        "n_sessions": len(scores),
        "n_flagged": sum(label.predicted for label in report.labels),
        "threshold": report.threshold,
        "confusion": report.confusion.model_dump(mode="json"),
        "max_f1": report.max_f1.f1,
        "mean_trial_max_f1": trials_document.get("mean_max_f1"),
        "outputs": outputs,
    }
