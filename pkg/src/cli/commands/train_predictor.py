"""Fit the MOS predictor, evaluate it over repeated trials and cross-fit predictions."""

import argparse
from typing import Any, Dict

from ...qoe import mos_predictor
from ...qoe.mos_predictor import LearnerSpec, compare_learners, cross_fit_predictions, fit_learner, run_trials
from ..dependencies import (
    EVAL_REPORT_JSON,
    FEATURES_CSV,
    LEARNER_COMPARISON_JSON,
    MOS_MODEL_JSON,
    PREDICTIONS_CSV,
    PREDICTOR_STAGE,
    PipelineContext,
    load_matrix,
    predictions_frame,
)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("train-predictor", help="Fit and evaluate the MOS predictor")
    parser.set_defaults(handler=handle_train_predictor)


def handle_train_predictor(args: argparse.Namespace, context: PipelineContext) -> Dict[str, Any]:
    inputs = context.require(PREDICTOR_STAGE, [FEATURES_CSV])
    options = context.config.predictor
    seed = context.config.seeds.predictor
    matrix = load_matrix(context.store)
    spec = LearnerSpec(kind=options.learner)

    model = fit_learner(spec, matrix, seed, options)
    report = run_trials(matrix, spec, options.n_trials, options.split_ratio, seed, options)
    comparison = compare_learners(matrix, options.n_trials, seed, options) if options.compare_learners else {}
    predicted = cross_fit_predictions(matrix, spec, options.n_folds, seed, options)

    context.store.save_json(MOS_MODEL_JSON, mos_predictor.model_to_dict(model))
    context.store.save_json(EVAL_REPORT_JSON, report.model_dump(mode="json"))
    context.store.save_json(LEARNER_COMPARISON_JSON, {name: r.model_dump(mode="json") for name, r in comparison.items()})
    context.store.save_frame(PREDICTIONS_CSV, predictions_frame(matrix, predicted))
    outputs = [MOS_MODEL_JSON, EVAL_REPORT_JSON, LEARNER_COMPARISON_JSON, PREDICTIONS_CSV]
    context.finish(PREDICTOR_STAGE, outputs, inputs)
    return {
        "learner": spec.name,
        "r2": report.r2,
        "r2_ci": list(report.r2_ci),
        "mse_per_session": report.mse_per_session,
        "compared": sorted(comparison),
        "outputs": outputs,
    }
