"""Build per-MOS feature rows and their correlation matrix."""

import argparse
from typing import Any, Dict

from ...qoe.feature_pipeline import build_rows_with_report, pearson_matrix, write_feature_csv
from ...qoe.trace_model import filter_model_eligible
from ..dependencies import (
    DATASET_FILES,
    FEATURE_REPORT_JSON,
    FEATURES_CSV,
    FEATURES_STAGE,
    PEARSON_CSV,
    PipelineContext,
    load_dataset,
)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("features", help="Compute features.csv and pearson.csv from the dataset")
    parser.set_defaults(handler=handle_features)


def handle_features(args: argparse.Namespace, context: PipelineContext) -> Dict[str, Any]:
    inputs = context.require(FEATURES_STAGE, DATASET_FILES)
    options = context.config.features
    eligible = filter_model_eligible(load_dataset(context.store), options.min_mos_samples)
    rows, report = build_rows_with_report(eligible, options.n_workers)
    pearson = pearson_matrix(rows)

    write_feature_csv(rows, context.store.path(FEATURES_CSV))
    context.store.save_frame(PEARSON_CSV, pearson.frame().reset_index())
    report = report.model_copy(update={"excluded_constant_columns": pearson.excluded})
    context.store.save_json(FEATURE_REPORT_JSON, report.model_dump(mode="json"))
    outputs = [FEATURES_CSV, PEARSON_CSV, FEATURE_REPORT_JSON]
    context.finish(FEATURES_STAGE, outputs, inputs)
    return {
        "n_sessions": report.n_sessions,
        "n_rows": report.n_rows,
        "n_dropped": report.n_dropped,
        "excluded_constant_columns": list(pearson.excluded),
        "outputs": outputs,
    }
