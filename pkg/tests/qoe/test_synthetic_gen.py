"""
Test suite for the synthetic drive-test generator.

Covers determinism, anomaly counts, the playback model and the calibration
of normal and anomalous sessions.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.core.config import GenConfig
from src.core.constants import MIN_MOS_SAMPLES
from src.core.exceptions import DataValidationError
from src.qoe.synthetic_gen import (
    anomalous_count,
    generate,
    ideal_trajectory,
    mos_oracle,
    mos_sample_times,
    simulate_playback,
)


class TestDeterminism:
    """Test that generation is a pure function of its configuration."""

    def test_same_config_same_dataset(self):
        """Test two runs with one config produce identical datasets."""
        config = GenConfig(n_sessions=6, anomaly_fraction=0.5, seed=11)

        assert generate(config).model_dump() == generate(config).model_dump()

    def test_worker_count_does_not_change_output(self):
        """Test thread-pool generation matches sequential generation."""
        sequential = GenConfig(n_sessions=6, anomaly_fraction=0.5, seed=11)
        pooled = sequential.model_copy(update={"n_workers": 3})

        assert generate(sequential).sessions == generate(pooled).sessions

    def test_different_seed_different_dataset(self):
        """Test changing the seed changes the sessions."""
        a = generate(GenConfig(n_sessions=3, seed=1))
        b = generate(GenConfig(n_sessions=3, seed=2))

        assert a.sessions != b.sessions


class TestDatasetShape:
    """Test structural properties of generated datasets."""

    def test_sessions_are_complete(self, small_gen_config):
        """Test ids, KPI coverage, MOS counts and tags of every session."""
        dataset = generate(small_gen_config)

        assert len(dataset.sessions) == 20
        assert len(set(dataset.session_ids())) == 20
        for session in dataset.sessions:
            assert len(session.kpi) == 60
            assert MIN_MOS_SAMPLES <= session.n_mos <= 15
            assert session.duration <= 60.0
            assert session.meta["scenario"] in ("normal", "anomalous")
            assert all(1.0 <= m.mos <= 5.0 for m in session.mos)

    def test_anomalous_tags_match_count(self, small_gen_config):
        """Test the number of anomalous sessions equals anomalous_count."""
        dataset = generate(small_gen_config)
        tagged = [s for s in dataset.sessions if s.meta["scenario"] == "anomalous"]

        assert len(tagged) == anomalous_count(small_gen_config) == 2
        assert all(s.meta["shape"] in ("late_fade", "early_fade", "oscillation") for s in tagged)

    def test_provenance_names_seed(self, small_gen_config):
        """Test provenance records the seed."""
        assert generate(small_gen_config).provenance.startswith("synthetic:seed=7:")


class TestAnomalousCount:
    """Test the anomalous session count rule."""

    @pytest.mark.parametrize("n_sessions,fraction,expected", [
        (1199, 0.0234, 28),
        (100, 0.025, 3),
        (20, 0.1, 2),
        (10, 0.0, 0),
        (10, 1.0, 10),
    ])
    def test_count(self, n_sessions, fraction, expected):
        """Test counts round half up."""
        assert anomalous_count(GenConfig(n_sessions=n_sessions, anomaly_fraction=fraction)) == expected

    def test_below_one_session_warns_and_generates_none(self, caplog):
        """Test an expected count below one yields zero anomalies and a warning."""
        config = GenConfig(n_sessions=10, anomaly_fraction=0.05)

        with caplog.at_level("WARNING"):
            dataset = generate(config)

        assert anomalous_count(config) == 0
        assert all(s.meta["scenario"] == "normal" for s in dataset.sessions)
        assert any("zero anomalous" in r.getMessage() for r in caplog.records)


class TestPlayback:
    """Test the adaptive-bitrate player and the MOS oracle."""

    def test_good_link_reaches_top_rung(self):
        """Test constant high SNR saturates at the top rung without stalls."""
        config = GenConfig()
        trace = simulate_playback(np.full(60, 30.0), np.full(60, 40.0), config)

        assert trace.rung[-1] == len(config.abr_ladder) - 1
        assert trace.stall.sum() == 0.0
        assert trace.mos[-1] == pytest.approx(config.abr_ladder[-1][1])

    def test_bad_link_stalls(self):
        """Test very low SNR stalls playback and clips MOS at the floor."""
        trace = simulate_playback(np.full(60, -15.0), np.full(60, 40.0), GenConfig())

        assert trace.stall.sum() > 0.0
        assert trace.mos[0] == 1.0
        assert trace.mos.min() >= 1.0

    def test_resumes_without_hold_after_stall(self):
        """Test playback resumes and MOS recovers in the first second the link returns."""
        snr = np.concatenate([np.full(10, -15.0), np.full(20, 30.0)])
        trace = simulate_playback(snr, np.full(30, 40.0), GenConfig())

        assert np.all(trace.stall[:10] > 0.0)
        assert np.all(trace.stall[10:] == 0.0)
        assert trace.mos[9] == 1.0
        assert trace.mos[10] > 2.0
        assert np.all(np.diff(trace.mos[10:]) >= -1e-12)

    def test_empty_series_rejected(self):
        """Test empty input series raise DataValidationError."""
        with pytest.raises(DataValidationError):
            mos_oracle([], [], GenConfig())

    def test_unequal_series_rejected(self):
        """Test SNR and PRB series of different lengths are rejected."""
        with pytest.raises(DataValidationError):
            simulate_playback([10.0, 10.0], [40.0], GenConfig())

    def test_oracle_samples_within_horizon(self):
        """Test oracle samples lie in (0, horizon] and in range."""
        samples = mos_oracle(np.full(30, 10.0), np.full(30, 40.0), GenConfig(seed=5))

        assert samples
        assert all(0.0 < s.t <= 30.0 for s in samples)
        assert all(1.0 <= s.mos <= 5.0 for s in samples)

    def test_sample_times_spacing(self):
        """Test MOS sample spacing stays inside the configured period bounds."""
        config = GenConfig()
        times = mos_sample_times(config, np.random.default_rng([0]))

        assert 12 <= len(times) <= 15
        assert np.all(np.diff(times) >= config.mos_period_min_s - 1e-6)
        assert np.all(np.diff(times) <= config.mos_period_max_s + 1e-6)

    def test_ideal_anomalous_below_normal(self):
        """Test the ideal anomalous trajectory ends below the normal one."""
        config = GenConfig()

        assert ideal_trajectory(config, "anomalous")[-1] < ideal_trajectory(config, "normal")[-1]

    @pytest.mark.property
    @settings(max_examples=40, deadline=None)
    @given(
        base=st.lists(st.floats(min_value=-20.0, max_value=35.0), min_size=5, max_size=30),
        lift=st.floats(min_value=0.0, max_value=5.0),
    )
    def test_oracle_monotone_in_snr(self, base, lift):
        """Test raising SNR everywhere never lowers any MOS sample."""
        config = GenConfig()
        snr = np.array(base)
        prb = np.full(len(base), 40.0)
        times = np.arange(1.0, len(base) + 1.0)

        low = mos_oracle(snr, prb, config, times)
        high = mos_oracle(snr + lift, prb, config, times)

        for a, b in zip(low, high):
            assert b.mos >= a.mos - 1e-12


@pytest.mark.slow
@pytest.mark.acceptance
class TestCalibration:
    """Test scenario calibration over a medium-sized generated dataset."""

    @pytest.fixture(scope="class")
    def dataset(self):
        return generate(GenConfig(n_sessions=200, anomaly_fraction=0.1, seed=1199))

    def test_session_snr_means(self, dataset):
        """Test session mean SNR lands in the scenario bands."""
        normal = [np.nanmean(s.kpi_values("snr")) for s in dataset.sessions if s.meta["scenario"] == "normal"]
        anomalous = [np.nanmean(s.kpi_values("snr")) for s in dataset.sessions if s.meta["scenario"] == "anomalous"]

        assert np.mean([3.3 <= v <= 4.5 for v in normal]) >= 0.9
        assert np.mean([-4.0 <= v <= -0.5 for v in anomalous]) >= 0.9

    def test_normal_sessions_hold_high_mos(self, dataset):
        """Test normal sessions average above 4.1 after the ramp-up."""
        late_means = [
            session.mos_values()[session.mos_times() >= 20.0].mean()
            for session in dataset.sessions
            if session.meta["scenario"] == "normal"
        ]

        assert np.mean([m > 4.1 for m in late_means]) >= 0.95

    def test_anomalous_sessions_dip(self, dataset):
        """Test every anomalous session dips below MOS 3."""
        for session in dataset.sessions:
            if session.meta["scenario"] == "anomalous":
                assert session.mos_values().min() < 3.0
