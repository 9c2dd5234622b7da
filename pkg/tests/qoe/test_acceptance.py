"""
Calibration and accuracy checks on generated data.

These tests generate hundreds of sessions and fit full learners or the
autoencoder, so they are marked slow; the detector ceiling check is the only
fast one.
"""

import numpy as np
import pytest

from src.core.config import GenConfig, PatternConfig, PredictorConfig
from src.core.constants import MOS_MAX, MOS_MIN, PATTERN_LENGTH, LearnerKind
from src.qoe.anomaly_detector import detect, run_detection_trials, score_sessions
from src.qoe.explainer import cumulative_snr_curves, shap_summary
from src.qoe.feature_pipeline import build_rows, to_matrix
from src.qoe.models import MosSequence, TypicalPattern
from src.qoe.mos_predictor import (
    LearnerSpec,
    compare_learners,
    cross_fit_predictions,
    fit_learner,
    run_trials,
    select_columns,
)
from src.qoe.pattern_recognizer import reconstruct, split_sessions, to_sequence, train_autoencoder, typical_pattern
from src.qoe.synthetic_gen import generate
from src.qoe.trace_model import filter_model_eligible
from tests.qoe.conftest import make_session


@pytest.fixture(scope="module")
def anomalous_data():
    """300 generated sessions with one in ten anomalous."""
    dataset = filter_model_eligible(generate(GenConfig(n_sessions=300, anomaly_fraction=0.1, seed=1199)))
    return dataset, to_matrix(build_rows(dataset))


@pytest.fixture(scope="module")
def default_data():
    """300 generated sessions at the default anomaly prevalence."""
    dataset = filter_model_eligible(generate(GenConfig(n_sessions=300, seed=1199)))
    return dataset, to_matrix(build_rows(dataset))


@pytest.fixture(scope="module")
def fast_forest():
    return PredictorConfig(n_trees=20, n_stages=50, min_samples_leaf=2)


@pytest.fixture(scope="module")
def fast_pattern():
    """One autoencoder cell, short enough for the acceptance suite."""
    return PatternConfig(
        epochs_grid=[60], batch_size_grid=[16], learning_rate_grid=[0.01], dropout_grid=[0.0], grid_search=False
    )


@pytest.mark.acceptance
class TestDetectorCeiling:
    """Test detection with perfect MOS predictions."""

    def test_true_mos_as_prediction_reaches_f1_one(self):
        """Test predictions equal to the true MOS give a max-F1 of exactly 1."""
        sessions = [make_session(f"n{i}", mos=[4.0] * 15) for i in range(8)]
        sessions += [make_session(f"a{i}", mos=[4.0] * 5 + [2.0 - 0.1 * i] * 10) for i in range(2)]
        truth = {s.id: s.mos_values() for s in sessions}
        pattern = TypicalPattern(values=(4.0,) * 15, n_sessions_aggregated=10)

        report = detect(score_sessions(sessions, truth, pattern), q=0.9, threshold_actual=0.5)

        assert report.max_f1.f1 == 1.0


@pytest.mark.slow
@pytest.mark.acceptance
class TestPredictorAccuracy:
    """Test learner ordering and fit quality on generated sessions."""

    def test_learner_ordering(self, anomalous_data, fast_forest):
        """Test forest beats the single tree, which beats the session-time tree."""
        _, matrix = anomalous_data

        reports = compare_learners(matrix, n_trials=5, seed=3, config=fast_forest)
        mse = {name: report.mse_per_session for name, report in reports.items()}

        assert mse["forest"] < mse["tree"] < mse["tree_sess_time"]

    def test_session_time_tree_fails_on_anomalies(self, anomalous_data, fast_forest):
        """Test the session-time tree errs at least twice as much on anomalous sessions."""
        dataset, matrix = anomalous_data
        spec = LearnerSpec(kind=LearnerKind.TREE, features=("sess_time",), label="tree_sess_time")
        scenario = {s.id: s.meta["scenario"] for s in dataset.sessions}

        predicted = cross_fit_predictions(matrix, spec, n_folds=4, seed=0, config=fast_forest)
        errors = {"normal": [], "anomalous": []}
        for sid in np.unique(matrix.session_ids):
            rows = matrix.session_ids == sid
            errors[scenario[sid]].append(np.mean((matrix.y[rows] - predicted[rows]) ** 2))

        assert np.mean(errors["anomalous"]) >= 2.0 * np.mean(errors["normal"])

    @pytest.mark.parametrize("kind", [LearnerKind.FOREST, LearnerKind.BOOSTED])
    def test_r2_bar(self, default_data, fast_forest, kind):
        """Test forest and boosting explain more than half of the MOS variance."""
        _, matrix = default_data

        report = run_trials(matrix, LearnerSpec(kind=kind), n_trials=3, seed=1, config=fast_forest)

        assert report.r2 > 0.5
        assert report.r2_ci[0] <= report.r2 <= report.r2_ci[1]

    def test_session_time_ranks_first(self, default_data):
        """Test session time has the largest mean absolute attribution."""
        _, matrix = default_data
        config = PredictorConfig(n_trees=20, max_depth=8, min_samples_leaf=5)
        model = fit_learner(LearnerSpec(kind=LearnerKind.FOREST), matrix, seed=0, config=config)
        sample = np.random.default_rng([0]).choice(len(matrix), size=300, replace=False)

        summary = shap_summary(model, select_columns(matrix, model.feature_names)[sample])

        assert summary.ranking[0][0] == "sess_time"


def noisy_copy(seq: MosSequence, rng: np.random.Generator, sigma: float = 0.3) -> MosSequence:
    """The sequence with Gaussian observation noise on its valid samples, re-padded."""
    observed = np.clip(np.array(seq.values[: seq.valid_len]) + rng.normal(0.0, sigma, seq.valid_len), MOS_MIN, MOS_MAX)
    padded = np.concatenate([observed, np.full(PATTERN_LENGTH - seq.valid_len, observed[-1])])
    return MosSequence(values=tuple(float(v) for v in padded), valid_len=seq.valid_len, session_id=seq.session_id)


def valid_mse(values: np.ndarray, truth: np.ndarray, valid_len: np.ndarray) -> float:
    """MSE over the first valid_len samples of each row."""
    valid = np.arange(PATTERN_LENGTH)[None, :] < valid_len[:, None]
    return float(np.mean((values - truth)[valid] ** 2))


@pytest.mark.slow
@pytest.mark.acceptance
class TestPatternDenoising:
    """Test the autoencoder on normal sessions with added observation noise."""

    def test_reconstruction_closer_to_clean_mos_than_noisy_input(self, fast_pattern):
        """Test held-out reconstructions of noisy sequences sit closer to the noise-free MOS."""
        dataset = filter_model_eligible(generate(GenConfig(n_sessions=200, anomaly_fraction=0.0, seed=404)))
        clean = {s.id: to_sequence(s) for s in dataset.sessions}
        rng = np.random.default_rng([404])
        noisy = [noisy_copy(clean[sid], rng) for sid in sorted(clean)]
        train, validation, test = split_sessions(noisy, 0.75, seed=0)

        model = train_autoencoder(train, validation, fast_pattern, seed=0)
        truth = np.array([clean[s.session_id].values for s in test])
        observed = np.array([s.values for s in test])
        reconstructed = np.array([reconstruct(model, s) for s in test])
        valid_len = np.array([s.valid_len for s in test])

        assert valid_mse(reconstructed, truth, valid_len) < valid_mse(observed, truth, valid_len)


@pytest.mark.slow
@pytest.mark.acceptance
class TestDetectionQuality:
    """Test detection over seeded trials at the default anomaly prevalence."""

    def test_mean_max_f1_bar(self, fast_pattern):
        """Test the mean max-F1 over ten trials reaches 0.70 with 1199 sessions."""
        dataset = filter_model_eligible(generate(GenConfig(n_sessions=1199, seed=7)))
        matrix = to_matrix(build_rows(dataset))
        sequences = [to_sequence(s) for s in dataset.sessions]
        train, validation, _ = split_sessions(sequences, 0.75, seed=0)
        pattern = typical_pattern(train_autoencoder(train, validation, fast_pattern, seed=0), sequences)
        predictor = PredictorConfig(n_trees=20, max_depth=10, min_samples_leaf=5)

        report = run_detection_trials(
            matrix, dataset, pattern, LearnerSpec(kind=LearnerKind.FOREST), n_trials=10, seed=0, predictor=predictor
        )

        assert report.n_trials == 10
        assert len(report.trials) + report.n_skipped == 10
        assert report.mean_max_f1 >= 0.70


@pytest.mark.slow
@pytest.mark.acceptance
class TestRootCauseCurves:
    """Test cumulative SNR curves of generated normal and anomalous sessions."""

    @pytest.fixture(scope="class")
    def points(self, anomalous_data):
        dataset, _ = anomalous_data
        labels = {s.id: s.meta["scenario"] == "anomalous" for s in dataset.sessions}
        return {(p.session_class, p.t): p for p in cumulative_snr_curves(dataset, labels)}

    def test_final_means_in_bands(self, points):
        """Test the curves end in their scenario bands at 60 s."""
        assert 3.3 <= points[("normal", 60)].mean <= 4.5
        assert -4.0 <= points[("abnormal", 60)].mean <= -0.5

    def test_intervals_separate_by_the_end(self, points):
        """Test the intervals overlap early and are disjoint at 60 s."""
        for t in (5, 10):
            normal, abnormal = points[("normal", t)], points[("abnormal", t)]
            assert normal.lo <= abnormal.hi and abnormal.lo <= normal.hi

        assert points[("abnormal", 60)].hi < points[("normal", 60)].lo
