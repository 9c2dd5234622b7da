"""
MOS regression: random forest, gradient boosting and single trees.

All learners are built on the CART trees in ``trees``. Evaluation splits by
session, never by row, and averages squared errors per session before
averaging over sessions.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from ..core.artifacts import OperationContext, dumps_canonical
from ..core.config import PredictorConfig
from ..core.constants import CI_Z, LearnerKind
from ..core.exceptions import ArtifactIOError, DataValidationError, InsufficientDataError
from .feature_pipeline import FeatureMatrix
from .models import EvalReport, TrialRecord
from .trees import RegressionTree, fit_tree

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TreeModel:
    tree: RegressionTree
    feature_names: Tuple[str, ...]
    kind: str = LearnerKind.TREE.value

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.tree.predict(X)

    @property
    def trees(self) -> Tuple[RegressionTree, ...]:
        return (self.tree,)


@dataclass(frozen=True)
class ForestModel:
    """Bagged trees; prediction is the mean of the tree predictions."""

    trees: Tuple[RegressionTree, ...]
    seeds: Tuple[Tuple[int, int], ...]
    max_features: float
    bootstrap: bool
    feature_names: Tuple[str, ...]
    kind: str = LearnerKind.FOREST.value

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.mean([tree.predict(X) for tree in self.trees], axis=0)


@dataclass(frozen=True)
class BoostedModel:
    """Additive model: initial + sum of shrinkage * stage tree."""

    initial: float
    stages: Tuple[RegressionTree, ...]
    shrinkage: float
    seed: int
    feature_names: Tuple[str, ...]
    kind: str = LearnerKind.BOOSTED.value

    def staged_predict(self, X: np.ndarray) -> Iterator[np.ndarray]:
        """Prediction after every stage."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        current = np.full(len(X), self.initial)
        for tree in self.stages:
            current = current + self.shrinkage * tree.predict(X)
            yield current

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        current = np.full(len(X), self.initial)
        for current in self.staged_predict(X):
            pass
        return current

    @property
    def trees(self) -> Tuple[RegressionTree, ...]:
        return self.stages


Model = Union[TreeModel, ForestModel, BoostedModel]


class LearnerSpec(BaseModel):
    """Learner family plus the feature columns it sees (all when None)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: LearnerKind = LearnerKind.FOREST
    features: Optional[Tuple[str, ...]] = None
    label: Optional[str] = None

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.features:
            return f"{self.kind.value}[{','.join(self.features)}]"
        return self.kind.value


def _check_rows(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise InsufficientDataError("learner needs at least one row", required=1, available=0)
    if X.shape[0] != len(y):
        raise DataValidationError("X and y lengths differ", field="X", value=X.shape)
    return X, y


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = 100,
    max_depth: Optional[int] = None,
    seed: int = 0,
    max_features: float = 1.0 / 3.0,
    min_samples_leaf: int = 2,
    bootstrap: bool = True,
    n_jobs: int = 1,
    feature_names: Sequence[str] = ()
) -> ForestModel:
    """
    Fit a random forest.

    Tree i draws its bootstrap resample and per-split feature subsets from
    the generator seeded with ``(seed, i)``, so the result does not depend on
    n_jobs.

    Raises:
        DataValidationError: If n_trees is 0
        InsufficientDataError: If there are no rows
    """
    if n_trees < 1:
        raise DataValidationError("n_trees must be at least 1", field="n_trees", value=n_trees)
    X, y = _check_rows(X, y)
    n = len(y)

    def grow(i: int) -> RegressionTree:
        rng = np.random.default_rng([seed, i])
        index = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        return fit_tree(X[index], y[index], max_depth, min_samples_leaf, max_features=max_features, rng=rng)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(grow, range(n_trees)))
    else:
        trees = [grow(i) for i in range(n_trees)]
    return ForestModel(
        trees=tuple(trees),
        seeds=tuple((seed, i) for i in range(n_trees)),
        max_features=max_features,
        bootstrap=bootstrap,
        feature_names=tuple(feature_names),
    )


def fit_boosted(
    X: np.ndarray,
    y: np.ndarray,
    n_stages: int = 200,
    shrinkage: float = 0.1,
    max_depth: int = 3,
    seed: int = 0,
    subsample: float = 1.0,
    min_samples_leaf: int = 1,
    feature_names: Sequence[str] = ()
) -> BoostedModel:
    """
    Fit gradient boosting with squared-error loss.

    Stage t fits a depth-limited tree to the residuals y - F_{t-1}(x). With
    subsample < 1 each stage fits on a random fraction of the rows drawn
    from the generator seeded with ``(seed, t)``.

    Raises:
        DataValidationError: If n_stages is 0 or shrinkage is outside (0, 1]
        InsufficientDataError: If there are no rows
    """
    if n_stages < 1:
        raise DataValidationError("n_stages must be at least 1", field="n_stages", value=n_stages)
    if not 0.0 < shrinkage <= 1.0:
        raise DataValidationError("shrinkage must lie in (0, 1]", field="shrinkage", value=shrinkage)
    X, y = _check_rows(X, y)
    n = len(y)
    initial = float(y.mean())
    current = np.full(n, initial)
    stages: List[RegressionTree] = []
    for stage in range(n_stages):
        residual = y - current
        if subsample < 1.0:
            rng = np.random.default_rng([seed, stage])
            index = np.sort(rng.choice(n, size=max(1, int(round(subsample * n))), replace=False))
        else:
            index = np.arange(n)
        tree = fit_tree(X[index], residual[index], max_depth, min_samples_leaf)
        current = current + shrinkage * tree.predict(X)
        stages.append(tree)
    return BoostedModel(initial, tuple(stages), shrinkage, seed, tuple(feature_names))


def select_columns(matrix: FeatureMatrix, features: Optional[Sequence[str]]) -> np.ndarray:
    """Columns of the matrix in the given feature order."""
    if not features:
        return matrix.X
    missing = [name for name in features if name not in matrix.feature_names]
    if missing:
        raise DataValidationError(f"features not in matrix: {missing}", field="features", value=missing)
    return matrix.X[:, [matrix.feature_names.index(name) for name in features]]


def fit_learner(spec: LearnerSpec, matrix: FeatureMatrix, seed: int = 0, config: Optional[PredictorConfig] = None) -> Model:
    """Fit the learner named by spec on the spec's feature columns."""
    config = config or PredictorConfig()
    X = select_columns(matrix, spec.features)
    names = tuple(spec.features or matrix.feature_names)
    if spec.kind == LearnerKind.FOREST:
        return fit_forest(
            X, matrix.y, config.n_trees, config.max_depth, seed, config.max_features,
            config.min_samples_leaf, config.bootstrap, config.n_jobs, names,
        )
    if spec.kind == LearnerKind.BOOSTED:
        return fit_boosted(X, matrix.y, config.n_stages, config.shrinkage, config.boost_depth, seed, config.subsample, feature_names=names)
    return TreeModel(fit_tree(X, matrix.y, config.max_depth, config.min_samples_leaf), names)


def predict_matrix(model: Model, matrix: FeatureMatrix) -> np.ndarray:
    """Predict using the model's own feature columns."""
    return model.predict(select_columns(matrix, model.feature_names or None))


def r2_score(y: Sequence[float], yhat: Sequence[float]) -> float:
    """
    Coefficient of determination 1 - SS_res / SS_tot.

    Raises:
        DataValidationError: On length mismatch, fewer than 2 values or constant y
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if len(y) != len(yhat) or len(y) < 2:
        raise DataValidationError("r2_score needs two equal-length series of at least 2 values", field="y")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DataValidationError("r2_score undefined for constant targets", field="y", validation_rule="Var(y) > 0")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def mse_per_session(session_ids: Sequence[str], y: Sequence[float], yhat: Sequence[float]) -> float:
    """
    Mean over sessions of the within-session mean squared error.

    Raises:
        InsufficientDataError: If there are no rows
    """
    if len(y) == 0:
        raise InsufficientDataError("mse_per_session needs at least one row", required=1, available=0)
    frame = pd.DataFrame({
        "session_id": np.asarray(session_ids, dtype=object),
        "sq": (np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)) ** 2,
    })
    return float(frame.groupby("session_id", sort=True)["sq"].mean().mean())


def normal_ci(values: Sequence[float]) -> Tuple[float, Tuple[float, float]]:
    """
    Mean and normal-approximation 95% interval mean +- 1.96 sd / sqrt(n).

    Raises:
        InsufficientDataError: If fewer than 2 values are given
    """
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        raise InsufficientDataError("confidence interval needs at least 2 values", required=2, available=len(values))
    mean = float(values.mean())
    half = CI_Z * float(values.std(ddof=1)) / math.sqrt(len(values))
    return mean, (mean - half, mean + half)


def session_split(session_ids: Sequence[str], ratio: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row masks for a session-level train/test split.

    The test share is round((1 - ratio) * n_sessions), at least one session
    on each side.

    Raises:
        InsufficientDataError: If fewer than 2 sessions are present
    """
    session_ids = np.asarray(session_ids, dtype=object)
    unique = sorted(set(session_ids.tolist()))
    if len(unique) < 2:
        raise InsufficientDataError("split needs at least 2 sessions", required=2, available=len(unique))
    n_test = int(math.floor((1.0 - ratio) * len(unique) + 0.5))
    n_test = min(max(n_test, 1), len(unique) - 1)
    order = rng.permutation(len(unique))
    test_ids = {unique[i] for i in order[:n_test]}
    test_mask = np.array([sid in test_ids for sid in session_ids], dtype=bool)
    return ~test_mask, test_mask


def run_trials(
    matrix: FeatureMatrix,
    spec: LearnerSpec,
    n_trials: int = 50,
    split: float = 0.75,
    seed: int = 0,
    config: Optional[PredictorConfig] = None
) -> EvalReport:
    """
    Repeated session-level holdout evaluation.

    Trial k splits with the generator seeded ``(seed, k)`` and fits the
    learner with seed ``seed + k``; learners evaluated with the same seed
    therefore share their splits.

    A trial whose test split has constant MOS has no R2; the R2 mean and
    interval cover the remaining trials and the count is reported.

    Raises:
        DataValidationError: If n_trials < 2
        InsufficientDataError: If there are fewer than 2 sessions, or fewer than 2
            trials with a defined R2
    """
    if n_trials < 2:
        raise DataValidationError("n_trials must be at least 2 for a confidence interval", field="n_trials", value=n_trials)
    context = OperationContext("run_trials", spec.name)
    context.log_start(f"Evaluating {spec.name} over {n_trials} trials", n_rows=len(matrix))
    records: List[TrialRecord] = []
    for trial in range(n_trials):
        train_mask, test_mask = session_split(matrix.session_ids, split, np.random.default_rng([seed, trial]))
        train, test = matrix.subset(train_mask), matrix.subset(test_mask)
        model = fit_learner(spec, train, seed + trial, config)
        yhat = predict_matrix(model, test)
        r2: Optional[float] = None
        if np.ptp(test.y) > 0.0:
            r2 = r2_score(test.y, yhat)
        else:
            context.log_warning(f"Trial {trial}: R2 undefined, test MOS is constant")
        records.append(TrialRecord(
            trial=trial,
            seed=(seed, trial),
            r2=r2,
            mse_per_session=mse_per_session(test.session_ids, test.y, yhat),
            n_train_sessions=len(set(train.session_ids.tolist())),
            n_test_sessions=len(set(test.session_ids.tolist())),
        ))
        context.log_debug(f"Trial {trial}", r2=records[-1].r2, mse_per_session=records[-1].mse_per_session)

    defined = [r.r2 for r in records if r.r2 is not None]
    if len(defined) < 2:
        error = InsufficientDataError("R2 needs at least 2 trials whose test MOS varies", required=2, available=len(defined))
        context.log_error("Evaluation failed", error)
        raise error
    r2, r2_ci = normal_ci(defined)
    mse, mse_ci = normal_ci([r.mse_per_session for r in records])
    context.log_success(f"{spec.name}: R2 {r2:.4f}, MSE per session {mse:.4f}")
    return EvalReport(
        learner=spec.name,
        n_trials=n_trials,
        r2=r2,
        r2_ci=r2_ci,
        mse_per_session=mse,
        mse_per_session_ci=mse_ci,
        trials=tuple(records),
        n_r2_undefined=n_trials - len(defined),
    )


def default_comparison() -> List[LearnerSpec]:
    """Forest, boosting, all-feature tree and the session-time-only tree."""
    return [
        LearnerSpec(kind=LearnerKind.FOREST),
        LearnerSpec(kind=LearnerKind.BOOSTED),
        LearnerSpec(kind=LearnerKind.TREE),
        LearnerSpec(kind=LearnerKind.TREE, features=("sess_time",), label="tree_sess_time"),
    ]


def compare_learners(
    matrix: FeatureMatrix,
    n_trials: int = 50,
    seed: int = 0,
    config: Optional[PredictorConfig] = None,
    specs: Optional[Sequence[LearnerSpec]] = None
) -> Dict[str, EvalReport]:
    """Evaluate several learners over the same trial splits."""
    config = config or PredictorConfig()
    return {
        spec.name: run_trials(matrix, spec, n_trials, config.split_ratio, seed, config)
        for spec in (specs or default_comparison())
    }


def cross_fit_predictions(
    matrix: FeatureMatrix,
    spec: LearnerSpec,
    n_folds: int = 4,
    seed: int = 0,
    config: Optional[PredictorConfig] = None
) -> np.ndarray:
    """
    Out-of-fold MOS predictions for every row.

    Sessions are shuffled and dealt into n_folds folds; each fold is
    predicted by a model fit on the other folds, so no row is predicted by a
    model that saw its session.

    Raises:
        InsufficientDataError: If there are fewer sessions than folds
    """
    unique = sorted(set(matrix.session_ids.tolist()))
    if n_folds < 2 or len(unique) < n_folds:
        raise InsufficientDataError("cross fitting needs at least one session per fold", required=max(n_folds, 2), available=len(unique))
    order = np.random.default_rng([seed]).permutation(len(unique))
    fold_of = {unique[i]: fold for fold, chunk in enumerate(np.array_split(order, n_folds)) for i in chunk}
    folds = np.array([fold_of[sid] for sid in matrix.session_ids], dtype=int)
    predictions = np.empty(len(matrix))
    for fold in range(n_folds):
        held_out = folds == fold
        model = fit_learner(spec, matrix.subset(~held_out), seed + fold, config)
        predictions[held_out] = predict_matrix(model, matrix.subset(held_out))
    logger.info(f"Cross-fitted {spec.name} over {n_folds} folds ({len(unique)} sessions)")
    return predictions


def model_to_dict(model: Model) -> Dict[str, object]:
    document: Dict[str, object] = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "feature_names": list(model.feature_names),
    }
    if isinstance(model, ForestModel):
        document.update({
            "seeds": [list(s) for s in model.seeds],
            "max_features": model.max_features,
            "bootstrap": model.bootstrap,
            "trees": [tree.to_dict() for tree in model.trees],
        })
    elif isinstance(model, BoostedModel):
        document.update({
            "initial": model.initial,
            "shrinkage": model.shrinkage,
            "seed": model.seed,
            "trees": [tree.to_dict() for tree in model.stages],
        })
    else:
        document["trees"] = [model.tree.to_dict()]
    return document


def model_from_dict(document: Dict[str, object]) -> Model:
    """
    Rebuild a model written by model_to_dict.

    Raises:
        ArtifactIOError: If the version or kind is unknown
    """
    if document.get("format_version") != MODEL_FORMAT_VERSION:
        raise ArtifactIOError(f"unsupported model format {document.get('format_version')}", "read")
    trees = tuple(RegressionTree.from_dict(t) for t in document["trees"])
    names = tuple(document.get("feature_names", ()))
    kind = document.get("kind")
    if kind == LearnerKind.FOREST.value:
        return ForestModel(trees, tuple(tuple(s) for s in document["seeds"]), float(document["max_features"]), bool(document["bootstrap"]), names)
    if kind == LearnerKind.BOOSTED.value:
        return BoostedModel(float(document["initial"]), trees, float(document["shrinkage"]), int(document["seed"]), names)
    if kind == LearnerKind.TREE.value:
        return TreeModel(trees[0], names)
    raise ArtifactIOError(f"unknown model kind {kind}", "read")


def save_model(model: Model, path: Path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(dumps_canonical(model_to_dict(model)))
    except OSError as e:
        raise ArtifactIOError(f"Failed to save model {path}: {e}", "write", str(path), e) from e


def load_model(path: Path) -> Model:
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactIOError(f"Failed to load model {path}: {e}", "read", str(path), e) from e
    return model_from_dict(document)
