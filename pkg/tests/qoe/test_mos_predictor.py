"""
Test suite for the MOS predictor: forest, boosting, metrics, the trial
protocol and model persistence.
"""

import numpy as np
import pytest

from src.core.config import PredictorConfig
from src.core.constants import LearnerKind
from src.core.exceptions import ArtifactIOError, DataValidationError, InsufficientDataError
from src.qoe.feature_pipeline import FeatureMatrix
from src.qoe.mos_predictor import (
    BoostedModel,
    ForestModel,
    LearnerSpec,
    TreeModel,
    compare_learners,
    cross_fit_predictions,
    fit_boosted,
    fit_forest,
    fit_learner,
    load_model,
    model_from_dict,
    model_to_dict,
    mse_per_session,
    normal_ci,
    r2_score,
    run_trials,
    save_model,
    session_split,
)
from src.qoe.trees import fit_tree


@pytest.fixture
def matrix():
    """Eight sessions of ten rows; MOS depends on two of three features."""
    rng = np.random.default_rng([3])
    n_sessions, per_session = 8, 10
    X = rng.normal(size=(n_sessions * per_session, 3))
    y = np.clip(3.0 + 0.8 * X[:, 0] - 0.4 * X[:, 1] + 0.05 * rng.normal(size=len(X)), 1.0, 5.0)
    session_ids = np.array([f"s{i}" for i in range(n_sessions) for _ in range(per_session)], dtype=object)
    mos_index = np.tile(np.arange(per_session), n_sessions)
    return FeatureMatrix(X, y, session_ids, mos_index, ("sess_time", "snr_s", "prb_c"))


class TestForest:
    """Test the random forest."""

    def test_single_tree_without_bootstrap_equals_tree(self, matrix):
        """Test one unbootstrapped tree over all features equals fit_tree."""
        forest = fit_forest(matrix.X, matrix.y, n_trees=1, max_features=1.0, min_samples_leaf=2, bootstrap=False)
        tree = fit_tree(matrix.X, matrix.y, None, 2)

        assert np.array_equal(forest.predict(matrix.X), tree.predict(matrix.X))

    def test_prediction_is_mean_of_trees(self, matrix):
        """Test the forest averages its trees."""
        forest = fit_forest(matrix.X, matrix.y, n_trees=4, seed=2)

        expected = np.mean([t.predict(matrix.X) for t in forest.trees], axis=0)

        assert np.allclose(forest.predict(matrix.X), expected)
        assert forest.seeds == ((2, 0), (2, 1), (2, 2), (2, 3))

    def test_parallel_fit_is_identical(self, matrix):
        """Test n_jobs does not change the fitted forest."""
        a = fit_forest(matrix.X, matrix.y, n_trees=4, seed=5)
        b = fit_forest(matrix.X, matrix.y, n_trees=4, seed=5, n_jobs=3)

        assert np.array_equal(a.predict(matrix.X), b.predict(matrix.X))

    def test_zero_trees_rejected(self, matrix):
        """Test n_trees = 0 raises DataValidationError."""
        with pytest.raises(DataValidationError):
            fit_forest(matrix.X, matrix.y, n_trees=0)

    def test_no_rows_rejected(self):
        """Test fitting on zero rows raises InsufficientDataError."""
        with pytest.raises(InsufficientDataError):
            fit_forest(np.zeros((0, 2)), np.zeros(0), n_trees=2)


class TestBoosting:
    """Test gradient boosting with squared error."""

    def test_two_point_stages(self):
        """Test {(0, 0), (1, 2)} with depth 1 and shrinkage 0.5."""
        X = np.array([[0.0], [1.0]])
        y = np.array([0.0, 2.0])

        model = fit_boosted(X, y, n_stages=2, shrinkage=0.5, max_depth=1)
        stages = [p.tolist() for p in model.staged_predict(X)]

        assert model.initial == 1.0
        assert stages[0] == pytest.approx([0.5, 1.5])
        assert stages[1] == pytest.approx([0.25, 1.75])

    def test_training_error_never_increases(self, matrix):
        """Test training MSE is non-increasing over stages."""
        model = fit_boosted(matrix.X, matrix.y, n_stages=25, shrinkage=0.3, max_depth=2)

        errors = [np.mean((matrix.y - p) ** 2) for p in model.staged_predict(matrix.X)]

        assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))

    @pytest.mark.parametrize("kwargs", [{"n_stages": 0}, {"shrinkage": 0.0}, {"shrinkage": 1.5}])
    def test_invalid_parameters(self, matrix, kwargs):
        """Test invalid stage counts and shrinkage are rejected."""
        with pytest.raises(DataValidationError):
            fit_boosted(matrix.X, matrix.y, **kwargs)


class TestMetrics:
    """Test R2, per-session MSE and confidence intervals."""

    def test_r2_examples(self):
        """Test perfect, mean and partial predictions."""
        y = [1.0, 2.0, 3.0]

        assert r2_score(y, y) == 1.0
        assert r2_score(y, [2.0, 2.0, 2.0]) == pytest.approx(0.0)
        assert r2_score(y, [1.0, 2.0, 2.0]) == pytest.approx(0.5)

    def test_r2_constant_target_rejected(self):
        """Test R2 is undefined for constant targets."""
        with pytest.raises(DataValidationError):
            r2_score([2.0, 2.0], [1.0, 3.0])

    def test_mse_per_session_averages_sessions(self):
        """Test sessions weigh equally regardless of their row counts."""
        ids = ["a"] * 10 + ["b"] * 2
        y = [3.0] * 12
        yhat = [2.0] * 10 + [3.0] * 2

        assert mse_per_session(ids, y, yhat) == pytest.approx(0.5)

    def test_mse_per_session_two_sessions(self):
        """Test session errors 0.2 and 0.6 average 0.4."""
        ids = ["a", "b"]
        y = [0.0, 0.0]
        yhat = [np.sqrt(0.2), np.sqrt(0.6)]

        assert mse_per_session(ids, y, yhat) == pytest.approx(0.4)

    def test_normal_ci(self):
        """Test the interval is mean +- 1.96 sd / sqrt(n)."""
        mean, (lo, hi) = normal_ci([1.0, 2.0, 3.0, 4.0])
        half = 1.96 * np.std([1.0, 2.0, 3.0, 4.0], ddof=1) / 2.0

        assert mean == 2.5
        assert (lo, hi) == pytest.approx((2.5 - half, 2.5 + half))

    def test_normal_ci_needs_two_values(self):
        """Test a single value raises InsufficientDataError."""
        with pytest.raises(InsufficientDataError):
            normal_ci([1.0])


class TestTrialProtocol:
    """Test session splits, repeated trials and cross fitting."""

    def test_session_split_keeps_sessions_whole(self, matrix):
        """Test no session contributes rows to both sides."""
        train, test = session_split(matrix.session_ids, 0.75, np.random.default_rng([0]))

        train_ids = set(matrix.session_ids[train].tolist())
        test_ids = set(matrix.session_ids[test].tolist())

        assert not train_ids & test_ids
        assert len(test_ids) == 2
        assert np.all(train ^ test)

    def test_run_trials_report(self, matrix):
        """Test the report carries one record per trial and a sensible fit."""
        config = PredictorConfig(n_trees=10, max_features=1.0, min_samples_leaf=1)

        report = run_trials(matrix, LearnerSpec(kind=LearnerKind.FOREST), n_trials=3, seed=1, config=config)

        assert report.n_trials == 3
        assert [t.seed for t in report.trials] == [(1, 0), (1, 1), (1, 2)]
        assert report.r2_ci[0] <= report.r2 <= report.r2_ci[1]
        assert report.r2 > 0.3
        assert all(t.n_test_sessions == 2 for t in report.trials)

    def test_run_trials_is_deterministic(self, matrix, small_predictor_config):
        """Test equal seeds give equal reports."""
        spec = LearnerSpec(kind=LearnerKind.TREE)

        assert run_trials(matrix, spec, 3, seed=4, config=small_predictor_config) == run_trials(
            matrix, spec, 3, seed=4, config=small_predictor_config
        )

    def test_run_trials_constant_test_split(self, small_predictor_config):
        """Test a trial whose held-out session has constant MOS gets no R2 instead of failing."""
        rng = np.random.default_rng([5])
        X = rng.normal(size=(40, 3))
        y = np.concatenate([np.full(20, 4.0), np.clip(3.0 + X[20:, 0], 1.0, 5.0)])
        session_ids = np.array([f"s{i}" for i in range(4) for _ in range(10)], dtype=object)
        constant = FeatureMatrix(X, y, session_ids, np.tile(np.arange(10), 4), ("sess_time", "snr_s", "prb_c"))

        report = run_trials(constant, LearnerSpec(kind=LearnerKind.TREE), n_trials=20, seed=2, config=small_predictor_config)

        for record in report.trials:
            _, test = session_split(session_ids, 0.75, np.random.default_rng([2, record.trial]))
            assert (record.r2 is None) == (set(session_ids[test].tolist()) <= {"s0", "s1"})
        assert report.n_r2_undefined == sum(record.r2 is None for record in report.trials)
        assert 0 < report.n_r2_undefined < 20

    def test_run_trials_all_constant_rejected(self, small_predictor_config):
        """Test evaluation fails when no trial has a varying test split."""
        X = np.random.default_rng([5]).normal(size=(40, 3))
        session_ids = np.array([f"s{i}" for i in range(4) for _ in range(10)], dtype=object)
        flat = FeatureMatrix(X, np.full(40, 4.0), session_ids, np.tile(np.arange(10), 4), ("sess_time", "snr_s", "prb_c"))

        with pytest.raises(InsufficientDataError):
            run_trials(flat, LearnerSpec(kind=LearnerKind.TREE), n_trials=3, config=small_predictor_config)

    def test_run_trials_needs_two_trials(self, matrix):
        """Test fewer than two trials is rejected."""
        with pytest.raises(DataValidationError):
            run_trials(matrix, LearnerSpec(), n_trials=1)

    def test_compare_learners_names(self, matrix, small_predictor_config):
        """Test the default comparison covers four learners."""
        reports = compare_learners(matrix, n_trials=2, seed=0, config=small_predictor_config)

        assert list(reports) == ["forest", "boosted", "tree", "tree_sess_time"]

    def test_cross_fit_covers_every_row(self, matrix, small_predictor_config):
        """Test out-of-fold predictions exist for every row."""
        predictions = cross_fit_predictions(matrix, LearnerSpec(kind=LearnerKind.TREE), n_folds=4, seed=0, config=small_predictor_config)

        assert predictions.shape == (len(matrix),)
        assert np.all(np.isfinite(predictions))

    def test_cross_fit_needs_enough_sessions(self, matrix):
        """Test more folds than sessions is rejected."""
        with pytest.raises(InsufficientDataError):
            cross_fit_predictions(matrix, LearnerSpec(), n_folds=9)

    def test_feature_subset_spec(self, matrix, small_predictor_config):
        """Test a spec with a feature subset fits on those columns only."""
        spec = LearnerSpec(kind=LearnerKind.TREE, features=("sess_time",), label="tree_sess_time")

        model = fit_learner(spec, matrix, config=small_predictor_config)

        assert model.feature_names == ("sess_time",)
        assert model.tree.n_features == 1
        assert spec.name == "tree_sess_time"


class TestModelPersistence:
    """Test model documents for every learner family."""

    @pytest.mark.parametrize("kind,cls", [
        (LearnerKind.TREE, TreeModel),
        (LearnerKind.FOREST, ForestModel),
        (LearnerKind.BOOSTED, BoostedModel),
    ])
    def test_round_trip(self, matrix, small_predictor_config, tmp_dir, kind, cls):
        """Test saved models reload with identical predictions."""
        model = fit_learner(LearnerSpec(kind=kind), matrix, seed=3, config=small_predictor_config)
        path = tmp_dir / "mos_model.json"

        save_model(model, path)
        loaded = load_model(path)

        assert isinstance(loaded, cls)
        assert np.array_equal(loaded.predict(matrix.X), model.predict(matrix.X))

    def test_unknown_kind_rejected(self, matrix):
        """Test an unknown model kind is rejected."""
        document = model_to_dict(TreeModel(fit_tree(matrix.X, matrix.y, 2), ()))
        document["kind"] = "svm"

        with pytest.raises(ArtifactIOError):
            model_from_dict(document)
