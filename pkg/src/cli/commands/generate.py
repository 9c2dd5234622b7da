"""Generate a synthetic drive-test dataset."""

import argparse
from typing import Any, Dict

from ...qoe.synthetic_gen import anomalous_count, generate
from ...qoe.trace_model import write_csv
from ..dependencies import DATASET_FILES, DATASET_CSV, DATASET_STAGE, PipelineContext


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("generate", help="Generate a synthetic dataset into dataset.csv")
    parser.set_defaults(handler=handle_generate)


def handle_generate(args: argparse.Namespace, context: PipelineContext) -> Dict[str, Any]:
    """
    Run the generator and write the trace CSV with its sidecar.

    Returns:
        Dataset summary plus the number of sessions tagged anomalous
    """
    gen = context.config.generator
    dataset = generate(gen)
    write_csv(dataset, context.store.path(DATASET_CSV))
    context.finish(DATASET_STAGE, DATASET_FILES)
    return {**dataset.summary(), "n_anomalous": anomalous_count(gen), "outputs": DATASET_FILES}
