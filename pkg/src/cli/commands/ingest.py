"""Ingest an external trace CSV."""

import argparse
from pathlib import Path
from typing import Any, Dict

from ...core.exceptions import ConfigurationError
from ...qoe.trace_model import ingest_csv_with_report, write_csv
from ..dependencies import DATASET_FILES, DATASET_CSV, DATASET_STAGE, INGEST_REPORT_JSON, PipelineContext


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("ingest", help="Validate an external trace CSV into dataset.csv")
    parser.add_argument("--input", dest="input_csv", help="Trace CSV (defaults to [paths] input_csv)")
    parser.set_defaults(handler=handle_ingest)


def handle_ingest(args: argparse.Namespace, context: PipelineContext) -> Dict[str, Any]:
    """
    Ingest a trace CSV, normalize it into the artifact directory and report rejected rows.

    Raises:
        ConfigurationError: If no input CSV is given
    """
    source = args.input_csv or context.config.paths.input_csv
    if not source:
        raise ConfigurationError("ingest needs --input or [paths] input_csv", key="paths.input_csv")
    dataset, report = ingest_csv_with_report(Path(source))
    write_csv(dataset, context.store.path(DATASET_CSV))
    context.store.save_json(INGEST_REPORT_JSON, report.model_dump(mode="json"))
    outputs = DATASET_FILES + [INGEST_REPORT_JSON]
    context.finish(DATASET_STAGE, outputs)
    return {
        **dataset.summary(context.config.features.min_mos_samples),
        "rejected_rows": report.rejected_rows,
        "outputs": outputs,
    }
