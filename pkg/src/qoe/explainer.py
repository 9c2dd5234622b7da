"""
Explanations for the tree models.

- Exact Shapley attributions under the tree-path-dependent distribution
  (polynomial-time recursion over the tree, vectorised across rows).
- Decision paths with per-node statistics for rendering.
- Distillation of a forest into a single shallow tree.
- Cumulative SNR curves of normal vs. abnormal sessions.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.constants import (
    ATTRIBUTION_CSV_COLUMNS,
    CI_Z,
    CSV_FLOAT_FORMAT,
    CURVE_CSV_COLUMNS,
    FEATURE_DISPLAY_NAMES,
    SESSION_DURATION_CAP_S,
    Kpi,
    SessionClass,
)
from ..core.exceptions import ArtifactIOError, DataValidationError, InsufficientDataError
from .feature_pipeline import causal_prefix, fill_plan
from .models import Attribution, CurvePoint, Dataset, DecisionPath, PathNode
from .mos_predictor import BoostedModel, ForestModel, Model, TreeModel
from .trees import LEAF, RegressionTree, fit_tree

logger = logging.getLogger(__name__)

Explainable = Union[RegressionTree, TreeModel, ForestModel, BoostedModel]


def expected_value(tree: RegressionTree) -> float:
    """Sample-weighted mean of the leaf values."""
    leaves = tree.feature == LEAF
    weights = tree.n_samples[leaves].astype(float)
    return float(np.sum(weights * tree.value[leaves]) / np.sum(weights))


class _Path:
    """Unique-feature path of the Shapley recursion; permutation weights are per row."""

    __slots__ = ("features", "zeros", "ones", "weights")

    def __init__(self, features: List[int], zeros: List[float], ones: List[np.ndarray], weights: List[np.ndarray]) -> None:
        self.features = features
        self.zeros = zeros
        self.ones = ones
        self.weights = weights

    def extend(self, zero: float, one: np.ndarray, feature: int) -> "_Path":
        depth = len(self.features)
        n = len(one)
        weights = [w.copy() for w in self.weights] + [np.ones(n) if depth == 0 else np.zeros(n)]
        for i in range(depth - 1, -1, -1):
            weights[i + 1] = weights[i + 1] + one * weights[i] * (i + 1) / (depth + 1)
            weights[i] = zero * weights[i] * (depth - i) / (depth + 1)
        return _Path(self.features + [feature], self.zeros + [zero], self.ones + [one], weights)

    def unwind(self, index: int) -> "_Path":
        depth = len(self.features) - 1
        one, zero = self.ones[index], self.zeros[index]
        active = one != 0
        safe_one = np.where(active, one, 1.0)
        weights: List[np.ndarray] = [None] * depth
        following = self.weights[depth]
        with np.errstate(divide="ignore", invalid="ignore"):
            for i in range(depth - 1, -1, -1):
                from_one = following * (depth + 1) / ((i + 1) * safe_one)
                from_zero = self.weights[i] * (depth + 1) / (zero * (depth - i))
                weights[i] = np.where(active, from_one, from_zero)
                following = self.weights[i] - weights[i] * zero * (depth - i) / (depth + 1)
        keep = [j for j in range(depth + 1) if j != index]
        return _Path(
            [self.features[j] for j in keep],
            [self.zeros[j] for j in keep],
            [self.ones[j] for j in keep],
            weights,
        )

    def unwound_sum(self, index: int) -> np.ndarray:
        depth = len(self.features) - 1
        one, zero = self.ones[index], self.zeros[index]
        active = one != 0
        safe_one = np.where(active, one, 1.0)
        total = np.zeros_like(one)
        following = self.weights[depth]
        with np.errstate(divide="ignore", invalid="ignore"):
            for i in range(depth - 1, -1, -1):
                from_one = following * (depth + 1) / ((i + 1) * safe_one)
                from_zero = self.weights[i] / (zero * (depth - i) / (depth + 1))
                total = total + np.where(active, from_one, from_zero)
                following = self.weights[i] - from_one * zero * (depth - i) / (depth + 1)
        return total


def tree_shap_values(tree: RegressionTree, X: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Exact path-dependent Shapley values of one tree for many rows.

    Args:
        tree: Fitted tree
        X: Rows (n, tree.n_features)

    Returns:
        (contributions of shape (n, n_features), expected value)
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = len(X)
    phi = np.zeros((n, tree.n_features))
    cover = tree.n_samples.astype(float)

    def recurse(node: int, path: _Path, zero: float, one: np.ndarray, feature: int) -> None:
        path = path.extend(zero, one, feature)
        if tree.feature[node] == LEAF:
            for i in range(1, len(path.features)):
                w = path.unwound_sum(i)
                phi[:, path.features[i]] += w * (path.ones[i] - path.zeros[i]) * tree.value[node]
            return
        split = int(tree.feature[node])
        goes_left = (X[:, split] <= tree.threshold[node]).astype(float)
        incoming_zero, incoming_one = 1.0, np.ones(n)
        if split in path.features[1:]:
            k = path.features.index(split, 1)
            incoming_zero, incoming_one = path.zeros[k], path.ones[k]
            path = path.unwind(k)
        left, right = int(tree.left[node]), int(tree.right[node])
        recurse(left, path, incoming_zero * cover[left] / cover[node], incoming_one * goes_left, split)
        recurse(right, path, incoming_zero * cover[right] / cover[node], incoming_one * (1.0 - goes_left), split)

    recurse(0, _Path([], [], [], []), 1.0, np.ones(n), LEAF)
    return phi, expected_value(tree)


def shap_values(model: Explainable, X: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Attributions for any supported tree model.

    Forest attributions are the mean of the tree attributions; boosted
    attributions are the shrinkage-weighted sum over stages.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(model, RegressionTree):
        return tree_shap_values(model, X)
    if isinstance(model, TreeModel):
        return tree_shap_values(model.tree, X)
    per_tree = [tree_shap_values(tree, X) for tree in model.trees]
    if isinstance(model, ForestModel):
        return np.mean([phi for phi, _ in per_tree], axis=0), float(np.mean([base for _, base in per_tree]))
    phi = model.shrinkage * np.sum([p for p, _ in per_tree], axis=0)
    return phi, model.initial + model.shrinkage * float(np.sum([base for _, base in per_tree]))


def _model_features(model: Explainable) -> Tuple[str, ...]:
    names = tuple(getattr(model, "feature_names", ()) or ())
    n_features = model.n_features if isinstance(model, RegressionTree) else model.trees[0].n_features
    return names if len(names) == n_features else tuple(f"f{i}" for i in range(n_features))


def _row_array(model: Explainable, row: Union[Sequence[float], Mapping[str, float]]) -> np.ndarray:
    names = _model_features(model)
    if isinstance(row, Mapping):
        missing = [name for name in names if name not in row]
        if missing:
            raise DataValidationError(f"feature missing in row: {missing}", field="row", value=missing)
        values = np.array([row[name] for name in names], dtype=float)
    else:
        values = np.asarray(row, dtype=float).ravel()
    if len(values) != len(names) or np.isnan(values).any():
        raise DataValidationError(
            f"row must hold {len(names)} present feature values",
            field="row",
            validation_rule="all features present",
        )
    return values


def tree_shap(model: Explainable, row: Union[Sequence[float], Mapping[str, float]], row_id: str = "row") -> Attribution:
    """
    Attribution of a single row; base_value + sum(contributions) equals the prediction.

    Raises:
        DataValidationError: If a feature is missing from the row
    """
    values = _row_array(model, row)
    phi, base = shap_values(model, values[None, :])
    return Attribution(
        row_id=row_id,
        base_value=base,
        prediction=float(model.predict(values[None, :])[0]),
        features=_model_features(model),
        values=tuple(float(v) for v in values),
        contributions=tuple(float(c) for c in phi[0]),
    )


def explain_rows(model: Explainable, X: np.ndarray, row_ids: Sequence[str]) -> List[Attribution]:
    """Attributions for many rows in one vectorised pass."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if np.isnan(X).any():
        raise DataValidationError("rows contain missing feature values", field="X")
    phi, base = shap_values(model, X)
    predictions = model.predict(X)
    names = _model_features(model)
    return [
        Attribution(
            row_id=str(row_id),
            base_value=base,
            prediction=float(prediction),
            features=names,
            values=tuple(float(v) for v in values),
            contributions=tuple(float(c) for c in contributions),
        )
        for row_id, values, contributions, prediction in zip(row_ids, X, phi, predictions)
    ]


@dataclass(frozen=True)
class ShapSummary:
    """Features ranked by mean |contribution| plus the per-row attributions behind the ranking."""

    base_value: float
    ranking: Tuple[Tuple[str, float], ...]
    attributions: Tuple[Attribution, ...]

    def to_dict(self) -> Dict[str, object]:
        return {
            "base_value": self.base_value,
            "n_rows": len(self.attributions),
            "ranking": [
                {"feature": name, "display_name": FEATURE_DISPLAY_NAMES.get(name, name), "mean_abs_contribution": value}
                for name, value in self.ranking
            ],
        }


def shap_summary(model: Explainable, X: np.ndarray, row_ids: Optional[Sequence[str]] = None) -> ShapSummary:
    """
    Rank features by mean absolute contribution over the rows.

    Ties keep the model's feature order.

    Raises:
        InsufficientDataError: If there are no rows
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(X) == 0:
        raise InsufficientDataError("shap_summary needs at least one row", required=1, available=0)
    row_ids = list(row_ids) if row_ids is not None else [str(i) for i in range(len(X))]
    attributions = explain_rows(model, X, row_ids)
    contributions = np.array([a.contributions for a in attributions])
    mean_abs = np.abs(contributions).mean(axis=0)
    names = _model_features(model)
    order = sorted(range(len(names)), key=lambda i: (-mean_abs[i], i))
    ranking = tuple((names[i], float(mean_abs[i])) for i in order)
    logger.info(f"Top feature by mean |attribution|: {ranking[0][0]}")
    return ShapSummary(attributions[0].base_value, ranking, tuple(attributions))


def decision_path(
    model: Union[RegressionTree, TreeModel],
    row: Union[Sequence[float], Mapping[str, float]],
    feature_names: Optional[Sequence[str]] = None,
    actual: Optional[float] = None
) -> DecisionPath:
    """
    Root-to-leaf route of a row with the statistics of every node passed.

    Each internal node records the threshold, the row's value, the branch
    taken ("<=" or ">"), the node sample count, the mean training target and
    the target histogram.
    """
    tree = model.tree if isinstance(model, TreeModel) else model
    names = tuple(feature_names or _model_features(model))
    values = _row_array(model, row) if isinstance(row, Mapping) else np.asarray(row, dtype=float).ravel()
    route = tree.path(values)
    nodes = []
    for node, child in zip(route[:-1], route[1:]):
        feature = int(tree.feature[node])
        nodes.append(PathNode(
            node_id=node,
            feature=names[feature],
            threshold=float(tree.threshold[node]),
            value=float(values[feature]),
            direction="<=" if child == tree.left[node] else ">",
            n_samples=int(tree.n_samples[node]),
            mean_target=float(tree.value[node]),
            histogram=tuple(int(c) for c in tree.histogram[node]),
        ))
    leaf = route[-1]
    return DecisionPath(
        nodes=tuple(nodes),
        leaf_id=leaf,
        leaf_prediction=float(tree.value[leaf]),
        leaf_n_samples=int(tree.n_samples[leaf]),
        leaf_histogram=tuple(int(c) for c in tree.histogram[leaf]),
        actual=actual,
    )


def decision_path_to_dict(path: DecisionPath) -> Dict[str, object]:
    """JSON form with display names for rendering."""
    document = path.model_dump()
    for node in document["nodes"]:
        node["display_name"] = FEATURE_DISPLAY_NAMES.get(node["feature"], node["feature"])
    return document


def distill(
    model: Model,
    X: np.ndarray,
    feature_subset: Optional[Sequence[str]] = None,
    max_depth: int = 8,
    min_samples_leaf: int = 1
) -> TreeModel:
    """
    Fit a shallow tree to the predictions of a fitted model.

    Args:
        model: Fitted model; X is in its feature order
        X: Rows to label with the model
        feature_subset: Model features the shallow tree may use (all when None)
        max_depth: Depth limit of the shallow tree

    Raises:
        InsufficientDataError: If X is empty
        DataValidationError: If a subset feature is unknown to the model
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(X) == 0:
        raise InsufficientDataError("distill needs at least one row", required=1, available=0)
    names = _model_features(model)
    subset = tuple(feature_subset or names)
    unknown = [name for name in subset if name not in names]
    if unknown:
        raise DataValidationError(f"features unknown to the model: {unknown}", field="feature_subset", value=unknown)
    labels = model.predict(X)
    columns = [names.index(name) for name in subset]
    shallow = fit_tree(X[:, columns], labels, max_depth, min_samples_leaf)
    logger.info(f"Distilled {model.kind} into a depth-{shallow.depth()} tree over {len(subset)} features")
    return TreeModel(shallow, subset)


def _ci(values: np.ndarray) -> Tuple[float, float, float]:
    mean = float(values.mean())
    if len(values) < 2:
        return mean, mean, mean
    half = CI_Z * float(values.std(ddof=1)) / np.sqrt(len(values))
    return mean, mean - half, mean + half


def session_snr_curve(times: np.ndarray, snr: np.ndarray, horizon: int) -> np.ndarray:
    """Running session SNR at t = 1..horizon, NaN until the first sample."""
    plan = fill_plan(snr)
    curve = np.full(horizon, np.nan)
    for t in range(1, horizon + 1):
        prefix_len = int(np.searchsorted(times, t, side="right"))
        prefix = causal_prefix(plan, prefix_len)
        present = prefix[~np.isnan(prefix)]
        if present.size:
            curve[t - 1] = present.mean()
    return curve


def cumulative_snr_curves(
    dataset: Dataset,
    labels: Mapping[str, bool],
    horizon: int = int(SESSION_DURATION_CAP_S)
) -> List[CurvePoint]:
    """
    Mean running session SNR per second for normal and abnormal sessions.

    Args:
        dataset: Sessions with SNR samples
        labels: session_id -> abnormal flag; unlabeled sessions are ignored
        horizon: Last second evaluated

    Returns:
        CurvePoints ordered by class (normal first), then t

    Raises:
        InsufficientDataError: If a class has no session
    """
    groups: Dict[str, List[np.ndarray]] = {SessionClass.NORMAL.value: [], SessionClass.ABNORMAL.value: []}
    for s in dataset.sessions:
        if s.id not in labels:
            continue
        key = SessionClass.ABNORMAL.value if labels[s.id] else SessionClass.NORMAL.value
        groups[key].append(session_snr_curve(s.kpi_times(), s.kpi_values(Kpi.SNR.value), horizon))
    for name, curves in groups.items():
        if not curves:
            raise InsufficientDataError(f"no {name} sessions for SNR curves", required=1, available=0)

    points: List[CurvePoint] = []
    for name, curves in groups.items():
        stacked = np.vstack(curves)
        for t in range(1, horizon + 1):
            column = stacked[:, t - 1]
            column = column[~np.isnan(column)]
            if column.size == 0:
                continue
            mean, lo, hi = _ci(column)
            points.append(CurvePoint(t=t, session_class=name, mean=mean, lo=lo, hi=hi, n=int(column.size)))
    return points


def curves_frame(points: Sequence[CurvePoint]) -> pd.DataFrame:
    return pd.DataFrame(
        [[p.t, p.session_class, p.mean, p.lo, p.hi] for p in points],
        columns=CURVE_CSV_COLUMNS,
    )


def attributions_frame(attributions: Sequence[Attribution]) -> pd.DataFrame:
    """Long form: one (row_id, feature, value, contribution) line per feature."""
    records = [
        [a.row_id, name, value, contribution]
        for a in attributions
        for name, value, contribution in zip(a.features, a.values, a.contributions)
    ]
    return pd.DataFrame(records, columns=ATTRIBUTION_CSV_COLUMNS)


def _write_frame(frame: pd.DataFrame, path: Path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n"))
    except OSError as e:
        raise ArtifactIOError(f"Failed to write {path}: {e}", "write", str(path), e) from e


def write_attributions_csv(attributions: Sequence[Attribution], path: Path) -> None:
    _write_frame(attributions_frame(attributions), path)


def write_curves_csv(points: Sequence[CurvePoint], path: Path) -> None:
    _write_frame(curves_frame(points), path)
