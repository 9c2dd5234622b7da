"""Attribute MOS predictions to features and extract root-cause evidence."""

import argparse
from typing import Any, Dict, List

import numpy as np

from ...qoe import mos_predictor
from ...qoe.explainer import (
    cumulative_snr_curves,
    decision_path,
    decision_path_to_dict,
    distill,
    shap_summary,
    write_attributions_csv,
    write_curves_csv,
)
from ...qoe.feature_pipeline import FeatureMatrix
from ..dependencies import (
    ATTRIBUTIONS_CSV,
    DATASET_FILES,
    DECISION_PATHS_JSON,
    DETECTION_REPORT_JSON,
    DISTILLED_TREE_JSON,
    EXPLAIN_STAGE,
    FEATURES_CSV,
    MOS_MODEL_JSON,
    SHAP_SUMMARY_JSON,
    SNR_CURVES_CSV,
    PipelineContext,
    load_dataset,
    load_matrix,
    load_mos_model,
)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("explain", help="Compute attributions, decision paths and SNR curves")
    parser.set_defaults(handler=handle_explain)


def sample_rows(matrix: FeatureMatrix, max_rows: int, seed: int) -> np.ndarray:
    """Sorted indices of at most max_rows rows drawn without replacement."""
    if max_rows is None or len(matrix) <= max_rows:
        return np.arange(len(matrix))
    return np.sort(np.random.default_rng([seed]).choice(len(matrix), size=max_rows, replace=False))


def path_rows(matrix: FeatureMatrix, flagged: List[str], count: int) -> List[int]:
    """Last MOS row of the first ``count`` flagged sessions, in session order."""
    rows = []
    for session_id in sorted(flagged)[:count]:
        index = np.nonzero(matrix.session_ids == session_id)[0]
        if index.size:
            rows.append(int(index[np.argmax(matrix.mos_index[index])]))
    return rows


def handle_explain(args: argparse.Namespace, context: PipelineContext) -> Dict[str, Any]:
    inputs = context.require(EXPLAIN_STAGE, [MOS_MODEL_JSON, FEATURES_CSV, DETECTION_REPORT_JSON] + DATASET_FILES)
    config = context.config
    options = config.explainer
    store = context.store
    model = load_mos_model(store)
    matrix = load_matrix(store)
    X = mos_predictor.select_columns(matrix, model.feature_names)

    sample = sample_rows(matrix, options.max_rows, config.seeds.explainer)
    row_ids = [f"{matrix.session_ids[i]}:{int(matrix.mos_index[i])}" for i in sample]
    summary = shap_summary(model, X[sample], row_ids)

    distilled = distill(model, X, options.feature_subset, options.max_depth)
    distilled_X = mos_predictor.select_columns(matrix, distilled.feature_names)
    session_labels = store.load_json(DETECTION_REPORT_JSON)["labels"]
    flagged = [label["session_id"] for label in session_labels if label["predicted"]]
    paths = [
        {"row_id": f"{matrix.session_ids[i]}:{int(matrix.mos_index[i])}",
         **decision_path_to_dict(decision_path(distilled, distilled_X[i], actual=float(matrix.y[i])))}
        for i in path_rows(matrix, flagged, options.n_decision_paths)
    ]
    # curves compare sessions by their actual deviation from the typical pattern
    curves = cumulative_snr_curves(load_dataset(store), {label["session_id"]: label["actual"] for label in session_labels})

    store.save_json(SHAP_SUMMARY_JSON, summary.to_dict())
    write_attributions_csv(summary.attributions, store.path(ATTRIBUTIONS_CSV))
    store.save_json(DISTILLED_TREE_JSON, mos_predictor.model_to_dict(distilled))
    store.save_json(DECISION_PATHS_JSON, paths)
    write_curves_csv(curves, store.path(SNR_CURVES_CSV))
    outputs = [SHAP_SUMMARY_JSON, ATTRIBUTIONS_CSV, DISTILLED_TREE_JSON, DECISION_PATHS_JSON, SNR_CURVES_CSV]
    context.finish(EXPLAIN_STAGE, outputs, inputs)
    return {
        "n_rows_explained": len(sample),
        "top_features": [name for name, _ in summary.ranking[:3]],
        "distilled_depth": distilled.tree.depth(),
        "n_decision_paths": len(paths),
        "outputs": outputs,
    }
