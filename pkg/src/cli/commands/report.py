"""Assemble the single JSON summary of a pipeline run."""

import argparse
from typing import Any, Dict

from ..dependencies import (
    DETECTION_REPORT_JSON,
    DETECTION_TRIALS_JSON,
    EVAL_REPORT_JSON,
    LEARNER_COMPARISON_JSON,
    REPORT_JSON,
    REPORT_STAGE,
    SHAP_SUMMARY_JSON,
    SNR_CURVES_CSV,
    TYPICAL_PATTERN_CSV,
    PipelineContext,
    load_pattern,
)

REPORT_INPUTS = [
    TYPICAL_PATTERN_CSV,
    EVAL_REPORT_JSON,
    LEARNER_COMPARISON_JSON,
    DETECTION_REPORT_JSON,
    DETECTION_TRIALS_JSON,
    SHAP_SUMMARY_JSON,
    SNR_CURVES_CSV,
]


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("report", help="Write report.json from the stage artifacts")
    parser.set_defaults(handler=handle_report)


def _evaluation(document: Dict[str, Any]) -> Dict[str, Any]:
    keys = ("learner", "n_trials", "r2", "r2_ci", "n_r2_undefined", "mse_per_session", "mse_per_session_ci")
    return {key: document[key] for key in keys}


def build_report(context: PipelineContext) -> Dict[str, Any]:
    """
    Collect the headline results of every stage.

    The report holds no paths or timestamps, so identical configurations give
    identical reports.
    """
    store = context.store
    pattern = load_pattern(store)
    detection = store.load_json(DETECTION_REPORT_JSON)
    curves = store.load_frame(SNR_CURVES_CSV)
    return {
        "config_hash": context.config_hash(),
        "typical_pattern": {"values": list(pattern.values), "n_sessions_aggregated": pattern.n_sessions_aggregated},
        "evaluation": _evaluation(store.load_json(EVAL_REPORT_JSON)),
        "learner_comparison": {name: _evaluation(doc) for name, doc in store.load_json(LEARNER_COMPARISON_JSON).items()},
        "detection": {
            "percentile": detection["percentile"],
            "threshold": detection["threshold"],
            "threshold_actual": detection["threshold_actual"],
            "n_sessions": len(detection["labels"]),
            "flagged": sorted(label["session_id"] for label in detection["labels"] if label["predicted"]),
            "confusion": detection["confusion"],
            "max_f1": detection["max_f1"],
        },
        "detection_trials": {key: value for key, value in store.load_json(DETECTION_TRIALS_JSON).items() if key != "trials"},
        "shap_ranking": store.load_json(SHAP_SUMMARY_JSON)["ranking"],
        "root_cause_curves": curves.to_dict(orient="records"),
    }


def handle_report(args: argparse.Namespace, context: PipelineContext) -> Dict[str, Any]:
    inputs = context.require(REPORT_STAGE, REPORT_INPUTS)
    report = build_report(context)
    context.store.save_json(REPORT_JSON, report)
    context.finish(REPORT_STAGE, [REPORT_JSON], inputs)
    return {"config_hash": report["config_hash"], "outputs": [REPORT_JSON]}
