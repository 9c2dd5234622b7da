"""Train the MOS autoencoder and derive the typical session pattern."""

import argparse
from typing import Any, Dict

from ...qoe.pattern_recognizer import (
    curve_frame,
    pattern_frame,
    save_model,
    split_sessions,
    to_sequence,
    train_autoencoder,
    typical_pattern,
)
from ...qoe.trace_model import filter_model_eligible
from ..dependencies import (
    AUTOENCODER_JSON,
    DATASET_FILES,
    PATTERN_STAGE,
    TRAINING_CURVE_CSV,
    TYPICAL_PATTERN_CSV,
    PipelineContext,
    load_dataset,
)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("train-pattern", help="Train the autoencoder and write typical_pattern.csv")
    parser.set_defaults(handler=handle_train_pattern)


def handle_train_pattern(args: argparse.Namespace, context: PipelineContext) -> Dict[str, Any]:
    """
    Split eligible sessions, grid-train the autoencoder and aggregate reconstructions.

    The typical pattern averages the reconstructions of every eligible session.
    """
    inputs = context.require(PATTERN_STAGE, DATASET_FILES)
    config = context.config
    min_samples = config.features.min_mos_samples
    eligible = filter_model_eligible(load_dataset(context.store), min_samples)
    sequences = [to_sequence(s, min_samples) for s in eligible.sessions]
    train, validation, test = split_sessions(sequences, config.pattern.split_ratio, config.seeds.split)
    model = train_autoencoder(train, validation, config.pattern, config.seeds.pattern, test)
    pattern = typical_pattern(model, sequences)

    save_model(model, context.store.path(AUTOENCODER_JSON))
    context.store.save_frame(TYPICAL_PATTERN_CSV, pattern_frame(pattern))
    context.store.save_frame(TRAINING_CURVE_CSV, curve_frame(model))
    outputs = [AUTOENCODER_JSON, TYPICAL_PATTERN_CSV, TRAINING_CURVE_CSV]
    context.finish(PATTERN_STAGE, outputs, inputs)
    return {
        "n_train": len(train),
        "n_validation": len(validation),
        "n_test": len(test),
        "cell": vars(model.cell).copy(),
        "final_val_mse": model.curve[-1].val_mse,
        "typical_pattern": list(pattern.values),
        "outputs": outputs,
    }
