"""
CART regression trees with exact split search.

Nodes are stored as flat arrays in preorder. Internal nodes carry a feature
index and a threshold; a row goes left when its value is <= the threshold.
Every node also keeps its training sample count, the mean of its training
targets and a histogram of those targets on the MOS scale.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core.constants import NODE_HISTOGRAM_EDGES
from ..core.exceptions import DataValidationError, InsufficientDataError

logger = logging.getLogger(__name__)

LEAF = -1


@dataclass(frozen=True)
class RegressionTree:
    """Fitted regression tree; immutable and safe to share between threads."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    histogram: np.ndarray
    n_features: int
    max_depth: Optional[int] = None
    min_samples_leaf: int = 1

    @classmethod
    def build(
        cls,
        feature: Sequence[int],
        threshold: Sequence[float],
        left: Sequence[int],
        right: Sequence[int],
        value: Sequence[float],
        n_samples: Sequence[int],
        n_features: int,
        histogram: Optional[Sequence[Sequence[int]]] = None,
        max_depth: Optional[int] = None,
        min_samples_leaf: int = 1
    ) -> "RegressionTree":
        """
        Assemble a tree from node arrays, e.g. a hand-built tree.

        Raises:
            DataValidationError: If the arrays disagree in length or a child index is invalid
        """
        n_nodes = len(feature)
        arrays = [threshold, left, right, value, n_samples]
        if n_nodes == 0 or any(len(a) != n_nodes for a in arrays):
            raise DataValidationError("node arrays must be non-empty and of equal length", field="nodes")
        feature_arr = np.asarray(feature, dtype=int)
        left_arr = np.asarray(left, dtype=int)
        right_arr = np.asarray(right, dtype=int)
        internal = feature_arr != LEAF
        children = np.concatenate([left_arr[internal], right_arr[internal]])
        if np.any(children <= 0) or np.any(children >= n_nodes):
            raise DataValidationError("child index out of range", field="left/right")
        if np.any(feature_arr[internal] >= n_features):
            raise DataValidationError("feature index out of range", field="feature")
        if histogram is None:
            hist = np.zeros((n_nodes, len(NODE_HISTOGRAM_EDGES) - 1), dtype=int)
        else:
            hist = np.asarray(histogram, dtype=int).reshape(n_nodes, -1)
        return cls(
            feature=feature_arr,
            threshold=np.asarray(threshold, dtype=float),
            left=left_arr,
            right=right_arr,
            value=np.asarray(value, dtype=float),
            n_samples=np.asarray(n_samples, dtype=int),
            histogram=hist,
            n_features=n_features,
            max_depth=max_depth,
            min_samples_leaf=min_samples_leaf,
        )

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return bool(self.feature[node] == LEAF)

    def depth(self) -> int:
        """Length of the longest root-to-leaf path in edges."""
        depths = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if not self.is_leaf(node):
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        nodes = np.zeros(len(X), dtype=int)
        while True:
            active = np.nonzero(self.feature[nodes] != LEAF)[0]
            if active.size == 0:
                return nodes
            current = nodes[active]
            go_left = X[active, self.feature[current]] <= self.threshold[current]
            nodes[active] = np.where(go_left, self.left[current], self.right[current])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def path(self, row: Sequence[float]) -> List[int]:
        """Node ids from the root to the leaf reached by one row."""
        row = np.asarray(row, dtype=float)
        node = 0
        nodes = [node]
        while not self.is_leaf(node):
            node = int(self.left[node] if row[self.feature[node]] <= self.threshold[node] else self.right[node])
            nodes.append(node)
        return nodes

    def used_features(self) -> List[int]:
        return sorted({int(f) for f in self.feature if f != LEAF})

    def to_dict(self) -> Dict[str, object]:
        return {
            "n_features": self.n_features,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "histogram": self.histogram.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "RegressionTree":
        return cls.build(
            feature=data["feature"],
            threshold=data["threshold"],
            left=data["left"],
            right=data["right"],
            value=data["value"],
            n_samples=data["n_samples"],
            n_features=int(data["n_features"]),
            histogram=data.get("histogram"),
            max_depth=data.get("max_depth"),
            min_samples_leaf=int(data.get("min_samples_leaf", 1)),
        )


def target_histogram(y: np.ndarray) -> np.ndarray:
    return np.histogram(y, bins=NODE_HISTOGRAM_EDGES)[0]


def best_split(
    X: np.ndarray,
    y: np.ndarray,
    candidates: Sequence[int],
    min_samples_leaf: int
):
    """
    Exhaustive search over midpoints of consecutive distinct values.

    Returns:
        (feature, threshold, child SSE) of the split with the lowest summed
        squared error, or None when no split respects min_samples_leaf. Ties go
        to the lowest feature index, then the lowest threshold.
    """
    n = len(y)
    best = None
    parent_sse = float(np.sum((y - y.mean()) ** 2))
    tolerance = 1e-12 * max(1.0, parent_sse)
    for feature in sorted(candidates):
        order = np.argsort(X[:, feature], kind="stable")
        xs = X[order, feature]
        ys = y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        n_left = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_samples_leaf) & (n - n_left >= min_samples_leaf)
        if not valid.any():
            continue
        sum_left = csum[:-1]
        sum_right = csum[-1] - sum_left
        sq_left = csq[:-1]
        sq_right = csq[-1] - sq_left
        sse = (sq_left - sum_left ** 2 / n_left) + (sq_right - sum_right ** 2 / (n - n_left))
        sse = np.where(valid, sse, np.inf)
        position = int(np.argmin(sse))
        if best is None or sse[position] < best[2] - tolerance:
            threshold = (xs[position] + xs[position + 1]) / 2.0
            best = (feature, float(threshold), float(sse[position]))
    return best


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: Optional[int] = None,
    min_samples_leaf: int = 1,
    feature_mask: Optional[Sequence[bool]] = None,
    max_features: Optional[float] = None,
    rng: Optional[np.random.Generator] = None
) -> RegressionTree:
    """
    Grow a regression tree by greedy variance reduction.

    Args:
        X: Features (n, n_features)
        y: Targets (n,)
        max_depth: Depth limit, None for unlimited
        min_samples_leaf: Minimum rows per leaf
        feature_mask: Features allowed to split (all when None)
        max_features: Fraction of the allowed features drawn per split (all when None)
        rng: Generator for per-split feature draws

    Returns:
        The fitted tree

    Raises:
        InsufficientDataError: If there are no rows or fewer than min_samples_leaf
        DataValidationError: If the feature mask is empty or shapes disagree
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise InsufficientDataError("fit_tree needs at least one row", required=1, available=0)
    if len(y) < min_samples_leaf:
        raise InsufficientDataError("fewer rows than min_samples_leaf", required=min_samples_leaf, available=len(y))
    if X.shape[0] != len(y):
        raise DataValidationError("X and y lengths differ", field="X", value=X.shape)
    n_features = X.shape[1]
    if feature_mask is None:
        allowed = list(range(n_features))
    else:
        mask = np.asarray(feature_mask, dtype=bool)
        if mask.shape != (n_features,):
            raise DataValidationError("feature mask length differs from the feature count", field="feature_mask")
        allowed = [int(i) for i in np.nonzero(mask)[0]]
    if not allowed:
        raise DataValidationError("feature mask selects no features", field="feature_mask")
    n_draw = len(allowed) if max_features is None else max(1, int(max_features * len(allowed)))
    if n_draw < len(allowed) and rng is None:
        rng = np.random.default_rng(0)

    nodes: Dict[str, list] = {key: [] for key in ("feature", "threshold", "left", "right", "value", "n_samples", "histogram")}

    def grow(index: np.ndarray, depth: int) -> int:
        node = len(nodes["feature"])
        ys = y[index]
        for key, item in (
            ("feature", LEAF), ("threshold", 0.0), ("left", LEAF), ("right", LEAF),
            ("value", float(ys.mean())), ("n_samples", len(index)), ("histogram", target_histogram(ys)),
        ):
            nodes[key].append(item)

        if (max_depth is not None and depth >= max_depth) or len(index) < 2 * min_samples_leaf or np.all(ys == ys[0]):
            return node
        candidates = allowed
        if n_draw < len(allowed):
            candidates = rng.choice(allowed, size=n_draw, replace=False).tolist()
        split = best_split(X[index], ys, candidates, min_samples_leaf)
        if split is None:
            return node
        feature, threshold, _ = split
        go_left = X[index, feature] <= threshold
        nodes["feature"][node] = feature
        nodes["threshold"][node] = threshold
        nodes["left"][node] = grow(index[go_left], depth + 1)
        nodes["right"][node] = grow(index[~go_left], depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return RegressionTree.build(
        feature=nodes["feature"],
        threshold=nodes["threshold"],
        left=nodes["left"],
        right=nodes["right"],
        value=nodes["value"],
        n_samples=nodes["n_samples"],
        n_features=n_features,
        histogram=nodes["histogram"],
        max_depth=max_depth,
        min_samples_leaf=min_samples_leaf,
    )
