"""
Test suite for the MOS pattern recognizer.

Covers sequence shaping, the session split, the numpy LSTM core with
finite-difference gradient checks, padding neutrality, training and model
persistence.
"""

import json

import numpy as np
import pytest

from src.core.config import PatternConfig
from src.core.exceptions import ArtifactIOError, DataValidationError, InsufficientDataError
from src.qoe.models import MosSequence
from src.qoe.neural import Adam, masked_mse, sigmoid
from src.qoe.pattern_recognizer import (
    AffineSequenceModel,
    AutoencoderModel,
    SequenceBatch,
    encode,
    gradient_check,
    load_model,
    reconstruct,
    save_model,
    split_sessions,
    to_sequence,
    train_autoencoder,
    typical_pattern,
)
from tests.qoe.conftest import make_session


def sequence(sid: str, values, valid_len: int = 15) -> MosSequence:
    return MosSequence(values=tuple(values), valid_len=valid_len, session_id=sid)


def wave(sid: str, phase: float = 0.0) -> MosSequence:
    return sequence(sid, [3.0 + np.sin(i / 3.0 + phase) for i in range(15)])


@pytest.fixture
def small_model(tiny_pattern_config):
    return AutoencoderModel(tiny_pattern_config, seed=3)


class TestToSequence:
    """Test fixed-length sequence construction."""

    def test_fifteen_samples_identity(self):
        """Test 15 samples pass through unchanged."""
        values = [4.0 - 0.1 * i for i in range(15)]

        seq = to_sequence(make_session("a", mos=values))

        assert seq.values == pytest.approx(tuple(values))
        assert seq.valid_len == 15

    def test_short_session_padded_with_last_value(self):
        """Test 12 samples ending at 4.3 are padded with 4.3."""
        values = [3.0] * 11 + [4.3]

        seq = to_sequence(make_session("a", n_mos=12, mos=values))

        assert seq.valid_len == 12
        assert seq.values[12:] == (4.3, 4.3, 4.3)
        assert seq.mask().tolist() == [1.0] * 12 + [0.0] * 3

    def test_long_session_truncated(self):
        """Test only the first 15 of 20 samples are kept."""
        values = [1.0 + 0.2 * i for i in range(20)]
        session = make_session("a", n_mos=20, mos=values, first_mos_t=2.0, period=2.5)

        seq = to_sequence(session)

        assert seq.values == pytest.approx(tuple(values[:15]))
        assert seq.valid_len == 15

    def test_ineligible_session_rejected(self):
        """Test fewer than 12 samples raises InsufficientDataError."""
        with pytest.raises(InsufficientDataError):
            to_sequence(make_session("a", n_mos=11))


class TestSplitSessions:
    """Test the session-level train, validation and test partition."""

    def test_sizes_for_sixteen(self):
        """Test n=16 gives test 4, validation 3 and train 9."""
        seqs = [wave(f"s{i}", i) for i in range(16)]

        train, validation, test = split_sessions(seqs, 0.75, seed=1)

        assert (len(train), len(validation), len(test)) == (9, 3, 4)

    def test_partition_is_disjoint_and_complete(self):
        """Test every session lands in exactly one part."""
        seqs = [wave(f"s{i}", i) for i in range(10)]

        train, validation, test = split_sessions(seqs, 0.75, seed=2)
        ids = [s.session_id for s in train + validation + test]

        assert sorted(ids) == sorted(s.session_id for s in seqs)

    def test_split_is_seeded(self):
        """Test equal seeds give equal splits."""
        seqs = [wave(f"s{i}", i) for i in range(10)]

        assert split_sessions(seqs, 0.75, 5) == split_sessions(seqs, 0.75, 5)

    def test_too_few_sequences(self):
        """Test fewer than four sequences raises InsufficientDataError."""
        with pytest.raises(InsufficientDataError):
            split_sessions([wave("a"), wave("b"), wave("c")])


class TestNeuralCore:
    """Test the numpy building blocks."""

    def test_sigmoid_is_stable(self):
        """Test sigmoid stays finite at extreme inputs."""
        out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))

        assert out.tolist() == pytest.approx([0.0, 0.5, 1.0])

    def test_masked_mse_ignores_padding(self):
        """Test masked positions contribute neither loss nor gradient."""
        loss, grad = masked_mse(np.array([[1.0, 9.0]]), np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]))

        assert loss == pytest.approx(1.0)
        assert grad.tolist() == [[2.0, 0.0]]

    def test_adam_moves_against_gradient(self):
        """Test one Adam step decreases a parameter with positive gradient."""
        params = {"w": np.array([1.0])}

        Adam(learning_rate=0.1).step(params, {"w": np.array([2.0])})

        assert params["w"][0] == pytest.approx(0.9)

    def test_zero_weights_output_head_bias(self, tiny_pattern_config):
        """Test an all-zero network outputs the head bias everywhere."""
        model = AutoencoderModel(tiny_pattern_config, seed=0)
        for name, value in model.parameters().items():
            if name != "head.b":
                value[...] = 0.0

        out = model.forward(np.full((2, 15), 4.0), np.ones((2, 15)))

        assert np.allclose(out, tiny_pattern_config.head_bias_init)


class TestGradientCheck:
    """Test analytic gradients against central finite differences."""

    def test_affine_model_is_exact(self):
        """Test the affine model matches finite differences to 1e-8."""
        batch = SequenceBatch.from_sequences([wave("a"), sequence("b", [2.0] * 12 + [1.0] * 3, valid_len=12)])

        assert gradient_check(AffineSequenceModel(), batch, epsilon=1e-5) < 1e-8

    def test_fresh_autoencoder(self, small_model):
        """Test a freshly initialized autoencoder passes the check."""
        batch = SequenceBatch.from_sequences([wave("a"), wave("b", 1.0), sequence("c", [3.5] * 15, valid_len=13)])

        assert gradient_check(small_model, batch, epsilon=1e-5, n_weights=200) < 1e-4

    def test_after_training_steps(self, small_model):
        """Test the check still passes after ten optimizer steps."""
        batch = SequenceBatch.from_sequences([wave("a"), wave("b", 2.0)])
        optimizer = Adam(learning_rate=1e-2)
        for _ in range(10):
            _, grads = small_model.loss_and_gradients(batch)
            optimizer.step(small_model.parameters(), grads)

        assert gradient_check(small_model, batch, epsilon=1e-5) < 1e-4

    def test_epsilon_range_enforced(self, small_model):
        """Test epsilon outside [1e-6, 1e-4] is rejected."""
        batch = SequenceBatch.from_sequences([wave("a")])

        with pytest.raises(DataValidationError):
            gradient_check(small_model, batch, epsilon=1e-2)


class TestPadding:
    """Test that padding never influences outputs or loss."""

    def test_padding_values_are_neutral(self, small_model):
        """Test different padding values give the same reconstruction and loss."""
        prefix = [3.0 + 0.1 * i for i in range(12)]
        padded_last = sequence("a", prefix + [prefix[-1]] * 3, valid_len=12)
        padded_other = sequence("a", prefix + [1.0, 5.0, 2.0], valid_len=12)

        assert np.array_equal(reconstruct(small_model, padded_last), reconstruct(small_model, padded_other))
        assert small_model.loss(SequenceBatch.from_sequences([padded_last])) == small_model.loss(
            SequenceBatch.from_sequences([padded_other])
        )


class TestTraining:
    """Test training, reconstruction and the typical pattern."""

    def test_reconstruct_is_deterministic_and_clamped(self, small_model):
        """Test repeated reconstructions are identical and within [1, 5]."""
        first = reconstruct(small_model, wave("a"))

        assert np.array_equal(first, reconstruct(small_model, wave("a")))
        assert first.shape == (15,)
        assert np.all((first >= 1.0) & (first <= 5.0))

    def test_encode_shape(self, small_model):
        """Test the bottleneck is six wide."""
        assert encode(small_model, [wave("a"), wave("b")]).shape == (2, 6)

    def test_single_sequence_pattern_equals_reconstruction(self, small_model):
        """Test the typical pattern of one sequence is its reconstruction."""
        seq = wave("a")

        pattern = typical_pattern(small_model, [seq])

        assert pattern.values == pytest.approx(tuple(reconstruct(small_model, seq)))
        assert pattern.n_sessions_aggregated == 1

    def test_typical_pattern_needs_sequences(self, small_model):
        """Test an empty sequence list raises InsufficientDataError."""
        with pytest.raises(InsufficientDataError):
            typical_pattern(small_model, [])

    def test_training_records_curve_and_split(self, tiny_pattern_config):
        """Test training keeps the selected cell, its curve and the split ids."""
        seqs = [wave(f"s{i}", i * 0.3) for i in range(12)]
        train, validation, test = split_sessions(seqs, 0.75, seed=0)

        model = train_autoencoder(train, validation, tiny_pattern_config, seed=4, test=test)

        assert [e.epoch for e in model.curve] == [1, 2, 3]
        assert model.cell.epochs == 3
        assert model.split["test"] == [s.session_id for s in test]
        assert all(np.isfinite(e.val_mse) for e in model.curve)

    def test_training_is_seeded(self, tiny_pattern_config):
        """Test equal seeds give equal weights."""
        seqs = [wave(f"s{i}", i * 0.3) for i in range(8)]

        a = train_autoencoder(seqs[:6], seqs[6:], tiny_pattern_config, seed=9)
        b = train_autoencoder(seqs[:6], seqs[6:], tiny_pattern_config, seed=9)

        for name, value in a.parameters().items():
            assert np.array_equal(value, b.parameters()[name])

    def test_grid_search_picks_lowest_validation(self):
        """Test grid search selects the cell with the lowest final validation MSE."""
        hyper = PatternConfig(
            encoder_width=8,
            epochs_grid=[2],
            batch_size_grid=[4],
            learning_rate_grid=[1e-2, 1e-3],
            dropout_grid=[0.0],
        )
        seqs = [wave(f"s{i}", i * 0.3) for i in range(8)]

        model = train_autoencoder(seqs[:6], seqs[6:], hyper, seed=1)

        assert model.cell.learning_rate in (1e-2, 1e-3)
        assert model.curve[-1].val_mse == pytest.approx(model.evaluate(SequenceBatch.from_sequences(seqs[6:])))

    def test_empty_validation_rejected(self, tiny_pattern_config):
        """Test an empty validation set raises InsufficientDataError."""
        with pytest.raises(InsufficientDataError):
            train_autoencoder([wave("a")], [], tiny_pattern_config)


class TestPersistence:
    """Test model save and load."""

    def test_save_load_reproduces_outputs(self, small_model, tmp_dir):
        """Test a reloaded model reconstructs identically."""
        path = tmp_dir / "autoencoder.json"

        digest = save_model(small_model, path)
        loaded = load_model(path)

        assert len(digest) == 64
        assert np.array_equal(reconstruct(loaded, wave("a")), reconstruct(small_model, wave("a")))

    def test_tampered_model_rejected(self, small_model, tmp_dir):
        """Test a modified weight fails the content hash check."""
        path = tmp_dir / "autoencoder.json"
        save_model(small_model, path)
        document = json.loads(path.read_text(encoding="utf-8"))
        document["weights"]["head.b"] = [0.0]
        path.write_text(json.dumps(document), encoding="utf-8")

        with pytest.raises(ArtifactIOError):
            load_model(path)
