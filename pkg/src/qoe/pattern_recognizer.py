"""
LSTM autoencoder for the typical MOS pattern.

Each model-eligible session becomes a 15-point MOS sequence. The encoder
(LSTM 15 wide, then LSTM 6 wide keeping only its final state) compresses a
sequence into a 6-wide bottleneck; the decoder repeats the bottleneck over
15 steps, runs LSTM 6 and LSTM 15 and maps every step through an affine
ReLU head. The typical pattern is the mean reconstruction over sessions.

Padded positions carry the last observed value and are masked out of the
loss, so pad content never reaches a gradient.
"""

import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..core.artifacts import OperationContext, dumps_canonical
from ..core.config import PatternConfig
from ..core.constants import MIN_MOS_SAMPLES, MOS_MAX, MOS_MIN, PATTERN_LENGTH
from ..core.exceptions import (
    ArtifactIOError,
    DataValidationError,
    InsufficientDataError,
    TrainingDivergenceError,
)
from .models import MosSequence, Session, TrainingEpoch, TypicalPattern
from .neural import Adam, AffineHead, LSTMLayer, masked_mse

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


def to_sequence(s: Session, min_mos_samples: int = MIN_MOS_SAMPLES) -> MosSequence:
    """
    Fixed-length MOS sequence of a session.

    The first 15 MOS values are kept; shorter sessions are padded with their
    last value and ``valid_len`` records the true length.

    Raises:
        InsufficientDataError: If the session has fewer than 12 MOS samples
    """
    values = [sample.mos for sample in s.mos]
    if len(values) < min_mos_samples:
        raise InsufficientDataError(
            f"session {s.id} has {len(values)} MOS samples, needs {min_mos_samples}",
            required=min_mos_samples,
            available=len(values),
        )
    kept = values[:PATTERN_LENGTH]
    valid_len = len(kept)
    padded = kept + [kept[-1]] * (PATTERN_LENGTH - valid_len)
    return MosSequence(values=tuple(padded), valid_len=valid_len, session_id=s.id)


def split_sessions(
    seqs: Sequence[MosSequence],
    ratio: float = 0.75,
    seed: int = 0
) -> Tuple[List[MosSequence], List[MosSequence], List[MosSequence]]:
    """
    Session-level train / validation / test partition.

    |test| = round((1 - ratio) * n) and |validation| = round((1 - ratio) * |final train|),
    with halves rounded up.

    Raises:
        InsufficientDataError: If fewer than 4 sequences are given
    """
    n = len(seqs)
    if n < 4:
        raise InsufficientDataError("split_sessions needs at least 4 sequences", required=4, available=n)
    n_test = int(math.floor((1.0 - ratio) * n + 0.5))
    n_final_train = n - n_test
    n_val = int(math.floor((1.0 - ratio) * n_final_train + 0.5))
    order = np.random.default_rng([seed]).permutation(n)
    test = [seqs[i] for i in order[:n_test]]
    validation = [seqs[i] for i in order[n_test:n_test + n_val]]
    train = [seqs[i] for i in order[n_test + n_val:]]
    return train, validation, test


@dataclass(frozen=True)
class SequenceBatch:
    """Stacked sequences: values and loss mask, both (n, 15)."""

    values: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_sequences(cls, seqs: Sequence[MosSequence]) -> "SequenceBatch":
        values = np.array([s.values for s in seqs], dtype=float).reshape(len(seqs), PATTERN_LENGTH)
        mask = np.array([s.mask() for s in seqs], dtype=float).reshape(len(seqs), PATTERN_LENGTH)
        return cls(values, mask)

    def take(self, index: np.ndarray) -> "SequenceBatch":
        return SequenceBatch(self.values[index], self.mask[index])

    def __len__(self) -> int:
        return len(self.values)


def canonical_inputs(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Overwrite masked tail positions with the last valid value."""
    out = values.copy()
    valid_len = mask.sum(axis=1).astype(int)
    for row, length in enumerate(valid_len):
        if 0 < length < values.shape[1]:
            out[row, length:] = out[row, length - 1]
    return out


@dataclass(frozen=True)
class TrainingCell:
    epochs: int
    batch_size: int
    learning_rate: float
    dropout: float


class AutoencoderModel:
    """
    Sequence autoencoder with a 6-wide bottleneck.

    The decoder reads nothing but the bottleneck vector, repeated once per
    output step.
    """

    def __init__(self, hyper: Optional[PatternConfig] = None, seed: int = 0, rng: Optional[np.random.Generator] = None) -> None:
        self.hyper = hyper or PatternConfig()
        self.seed = seed
        rng = rng or np.random.default_rng([seed])
        width = self.hyper.encoder_width
        bottleneck = self.hyper.bottleneck_width
        self.enc1 = LSTMLayer(1, width, rng)
        self.enc2 = LSTMLayer(width, bottleneck, rng)
        self.dec1 = LSTMLayer(bottleneck, bottleneck, rng)
        self.dec2 = LSTMLayer(bottleneck, width, rng)
        self.head = AffineHead(width, self.hyper.head_bias_init, rng)
        self.cell: Optional[TrainingCell] = None
        self.curve: List[TrainingEpoch] = []
        self.split: Dict[str, object] = {}
        self._masks: Tuple[Optional[np.ndarray], Optional[np.ndarray]] = (None, None)

    @property
    def layers(self) -> Dict[str, object]:
        return {"enc1": self.enc1, "enc2": self.enc2, "dec1": self.dec1, "dec2": self.dec2, "head": self.head}

    def parameters(self) -> Dict[str, np.ndarray]:
        """Live parameter arrays keyed ``<layer>.<name>``."""
        return {f"{layer_name}.{name}": value for layer_name, layer in self.layers.items() for name, value in layer.params.items()}

    def encode_batch(self, values: np.ndarray, mask: np.ndarray, dropout: float = 0.0, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        x = canonical_inputs(values, mask)[..., None]
        h1 = self.enc1.forward(x)
        m1 = _dropout_mask(h1.shape, dropout, rng)
        h2 = self.enc2.forward(h1 * m1 if m1 is not None else h1)
        self._masks = (m1, self._masks[1])
        return h2[:, -1]

    def decode_batch(self, z: np.ndarray, dropout: float = 0.0, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        repeated = np.repeat(z[:, None, :], PATTERN_LENGTH, axis=1)
        h3 = self.dec1.forward(repeated)
        h4 = self.dec2.forward(h3)
        m4 = _dropout_mask(h4.shape, dropout, rng)
        self._masks = (self._masks[0], m4)
        return self.head.forward(h4 * m4 if m4 is not None else h4)

    def forward(self, values: np.ndarray, mask: np.ndarray, dropout: float = 0.0, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Raw reconstructions of shape (n, 15)."""
        return self.decode_batch(self.encode_batch(values, mask, dropout, rng), dropout, rng)

    def loss(self, batch: SequenceBatch) -> float:
        output = self.forward(batch.values, batch.mask)
        return masked_mse(output, batch.values, batch.mask)[0]

    def loss_and_gradients(
        self,
        batch: SequenceBatch,
        dropout: float = 0.0,
        rng: Optional[np.random.Generator] = None
    ) -> Tuple[float, Dict[str, np.ndarray]]:
        """Masked reconstruction MSE and its gradient w.r.t. every parameter."""
        output = self.forward(batch.values, batch.mask, dropout, rng)
        loss, d_out = masked_mse(output, batch.values, batch.mask)
        m1, m4 = self._masks

        grads: Dict[str, np.ndarray] = {}
        d_h4, head_grads = self.head.backward(d_out)
        if m4 is not None:
            d_h4 = d_h4 * m4
        d_h3, dec2_grads = self.dec2.backward(d_h4)
        d_rep, dec1_grads = self.dec1.backward(d_h3)
        d_z = d_rep.sum(axis=1)
        d_h2 = np.zeros((len(batch), PATTERN_LENGTH, self.hyper.bottleneck_width))
        d_h2[:, -1] = d_z
        d_h1, enc2_grads = self.enc2.backward(d_h2)
        if m1 is not None:
            d_h1 = d_h1 * m1
        _, enc1_grads = self.enc1.backward(d_h1)

        for layer_name, layer_grads in (
            ("enc1", enc1_grads), ("enc2", enc2_grads), ("dec1", dec1_grads), ("dec2", dec2_grads), ("head", head_grads)
        ):
            for name, grad in layer_grads.items():
                grads[f"{layer_name}.{name}"] = grad
        return loss, grads

    def evaluate(self, batch: SequenceBatch) -> float:
        """Masked MSE without dropout."""
        return self.loss(batch)


def _dropout_mask(shape: Tuple[int, ...], rate: float, rng: Optional[np.random.Generator]) -> Optional[np.ndarray]:
    """Inverted dropout mask, or None when dropout is off."""
    if rate <= 0.0 or rng is None:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


class AffineSequenceModel:
    """Per-step ``weight * x + bias`` with masked MSE; exact case for gradient checks."""

    def __init__(self, weight: float = 0.5, bias: float = 0.1) -> None:
        self.params = {"weight": np.array([weight], dtype=float), "bias": np.array([bias], dtype=float)}

    def parameters(self) -> Dict[str, np.ndarray]:
        return self.params

    def _output(self, batch: SequenceBatch) -> np.ndarray:
        return self.params["weight"][0] * batch.values + self.params["bias"][0]

    def loss(self, batch: SequenceBatch, target: Optional[np.ndarray] = None) -> float:
        return masked_mse(self._output(batch), self._target(batch, target), batch.mask)[0]

    def loss_and_gradients(self, batch: SequenceBatch, target: Optional[np.ndarray] = None) -> Tuple[float, Dict[str, np.ndarray]]:
        loss, d_out = masked_mse(self._output(batch), self._target(batch, target), batch.mask)
        return loss, {
            "weight": np.array([np.sum(d_out * batch.values)]),
            "bias": np.array([np.sum(d_out)]),
        }

    @staticmethod
    def _target(batch: SequenceBatch, target: Optional[np.ndarray]) -> np.ndarray:
        # Regress towards the sequence mean so the loss is not trivially zero
        if target is not None:
            return target
        return np.repeat(batch.values.mean(axis=1, keepdims=True), batch.values.shape[1], axis=1)


def gradient_check(model, batch: SequenceBatch, epsilon: float = 1e-5, n_weights: int = 200, seed: int = 0) -> float:
    """
    Compare analytic gradients with central finite differences.

    At least ``n_weights`` parameters are sampled, spread over every parameter
    tensor in proportion to its size and never fewer than four per tensor
    (or the whole tensor when smaller).

    Args:
        model: Object exposing ``parameters()``, ``loss(batch)`` and ``loss_and_gradients(batch)``
        batch: Small batch, evaluated without dropout
        epsilon: Finite difference step in [1e-6, 1e-4]
        n_weights: Minimum number of sampled weights
        seed: Sampling seed

    Returns:
        Maximum relative error |a - n| / max(|a|, |n|, 1e-6)

    Raises:
        DataValidationError: If epsilon is outside [1e-6, 1e-4]
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise DataValidationError("epsilon must lie in [1e-6, 1e-4]", field="epsilon", value=epsilon)
    _, analytic = model.loss_and_gradients(batch)
    params = model.parameters()
    total = sum(p.size for p in params.values())
    rng = np.random.default_rng([seed])
    worst = 0.0
    checked = 0
    for name in sorted(params):
        tensor = params[name]
        count = min(tensor.size, max(4, int(math.ceil(n_weights * tensor.size / total))))
        for flat_index in rng.choice(tensor.size, size=count, replace=False):
            original = tensor.flat[flat_index]
            tensor.flat[flat_index] = original + epsilon
            loss_plus = model.loss(batch)
            tensor.flat[flat_index] = original - epsilon
            loss_minus = model.loss(batch)
            tensor.flat[flat_index] = original
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            exact = analytic[name].flat[flat_index]
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-6)
            worst = max(worst, error)
            checked += 1
    logger.debug(f"Gradient check over {checked} weights: max relative error {worst:.3e}")
    return worst


def _grid(hyper: PatternConfig) -> List[TrainingCell]:
    if not hyper.grid_search:
        return [TrainingCell(hyper.epochs_grid[0], hyper.batch_size_grid[0], hyper.learning_rate_grid[0], hyper.dropout_grid[0])]
    return [
        TrainingCell(epochs, batch, lr, dropout)
        for epochs, batch, lr, dropout in itertools.product(
            hyper.epochs_grid, hyper.batch_size_grid, hyper.learning_rate_grid, hyper.dropout_grid
        )
    ]


def _train_cell(
    train: SequenceBatch,
    validation: SequenceBatch,
    hyper: PatternConfig,
    cell: TrainingCell,
    seed: int,
    cell_index: int
) -> AutoencoderModel:
    rng = np.random.default_rng([seed, cell_index])
    model = AutoencoderModel(hyper, seed, rng)
    optimizer = Adam(cell.learning_rate, hyper.beta1, hyper.beta2, hyper.adam_epsilon)
    params = model.parameters()
    initial_val = model.evaluate(validation)
    limit = hyper.divergence_factor * max(initial_val, 1e-12)
    over_limit = 0
    curve: List[TrainingEpoch] = []

    for epoch in range(1, cell.epochs + 1):
        order = rng.permutation(len(train))
        for start in range(0, len(train), cell.batch_size):
            _, grads = model.loss_and_gradients(train.take(order[start:start + cell.batch_size]), cell.dropout, rng)
            optimizer.step(params, grads)
        train_mse = model.evaluate(train)
        val_mse = model.evaluate(validation)
        curve.append(TrainingEpoch(epoch=epoch, train_mse=train_mse, val_mse=val_mse))
        if not np.isfinite(val_mse) or val_mse > limit:
            over_limit += 1
            if over_limit >= hyper.divergence_patience:
                raise TrainingDivergenceError(
                    f"validation MSE above {hyper.divergence_factor:g}x initial for {over_limit} epochs",
                    epoch,
                    float(val_mse),
                    initial_val,
                )
        else:
            over_limit = 0

    model.cell = cell
    model.curve = curve
    return model


def train_autoencoder(
    train: Sequence[MosSequence],
    validation: Sequence[MosSequence],
    hyper: Optional[PatternConfig] = None,
    seed: int = 0,
    test: Sequence[MosSequence] = ()
) -> AutoencoderModel:
    """
    Train the autoencoder, grid-searching hyperparameters by validation MSE.

    Every grid cell trains from its own seed ``(seed, cell index)``. A cell
    that diverges is excluded; if every cell diverges the last divergence
    error is raised.

    Args:
        train: Training sequences
        validation: Validation sequences
        hyper: Architecture and grid (defaults when None)
        seed: Training seed
        test: Held-out sequences, recorded in the split record only

    Returns:
        The model with the lowest final validation MSE (ties to the earlier cell)

    Raises:
        InsufficientDataError: If train or validation is empty
        TrainingDivergenceError: If every grid cell diverges
    """
    hyper = hyper or PatternConfig()
    if not train or not validation:
        raise InsufficientDataError("train and validation sets must be non-empty", required=1, available=min(len(train), len(validation)))
    cells = _grid(hyper)
    context = OperationContext("train_autoencoder", f"{len(cells)} cells")
    context.log_start(f"Training autoencoder on {len(train)} sequences", n_validation=len(validation), n_cells=len(cells))
    train_batch = SequenceBatch.from_sequences(train)
    val_batch = SequenceBatch.from_sequences(validation)

    def run(indexed: Tuple[int, TrainingCell]):
        index, cell = indexed
        try:
            return _train_cell(train_batch, val_batch, hyper, cell, seed, index)
        except TrainingDivergenceError as e:
            return e

    if hyper.n_workers > 1:
        with ThreadPoolExecutor(max_workers=hyper.n_workers) as pool:
            results = list(pool.map(run, enumerate(cells)))
    else:
        results = [run(item) for item in enumerate(cells)]

    models = [r for r in results if isinstance(r, AutoencoderModel)]
    failures = [r for r in results if isinstance(r, TrainingDivergenceError)]
    for failure in failures:
        context.log_warning(f"Grid cell diverged at epoch {failure.epoch}", val_mse=failure.val_mse)
    if not models:
        context.log_error("Every grid cell diverged", failures[-1])
        raise failures[-1]

    best = min(models, key=lambda m: m.curve[-1].val_mse)
    best.split = {
        "seed": seed,
        "train": [s.session_id for s in train],
        "validation": [s.session_id for s in validation],
        "test": [s.session_id for s in test],
    }
    context.log_success(
        "Selected autoencoder cell",
        epochs=best.cell.epochs,
        batch_size=best.cell.batch_size,
        learning_rate=best.cell.learning_rate,
        dropout=best.cell.dropout,
        val_mse=best.curve[-1].val_mse,
    )
    return best


def reconstruct_raw(model: AutoencoderModel, seqs: Sequence[MosSequence]) -> np.ndarray:
    """Unclamped reconstructions, shape (n, 15)."""
    batch = SequenceBatch.from_sequences(seqs)
    return model.forward(batch.values, batch.mask)


def reconstruct(model: AutoencoderModel, seq: MosSequence) -> np.ndarray:
    """Deterministic reconstruction clamped to [1, 5]."""
    return np.clip(reconstruct_raw(model, [seq])[0], MOS_MIN, MOS_MAX)


def encode(model: AutoencoderModel, seqs: Sequence[MosSequence]) -> np.ndarray:
    """Bottleneck states, shape (n, 6)."""
    batch = SequenceBatch.from_sequences(seqs)
    return model.encode_batch(batch.values, batch.mask)


def decode(model: AutoencoderModel, z: np.ndarray) -> np.ndarray:
    """Unclamped decoder output for bottleneck states, shape (n, 15)."""
    return model.decode_batch(np.atleast_2d(np.asarray(z, dtype=float)))


def typical_pattern(model: AutoencoderModel, seqs: Sequence[MosSequence]) -> TypicalPattern:
    """
    Pointwise mean of the reconstructions, clamped to [1, 5].

    Raises:
        InsufficientDataError: If seqs is empty
    """
    if not seqs:
        raise InsufficientDataError("typical_pattern needs at least one sequence", required=1, available=0)
    mean = reconstruct_raw(model, seqs).mean(axis=0)
    values = tuple(float(v) for v in np.clip(mean, MOS_MIN, MOS_MAX))
    return TypicalPattern(values=values, n_sessions_aggregated=len(seqs))


def pattern_frame(pattern: TypicalPattern) -> pd.DataFrame:
    return pd.DataFrame({
        "index": np.arange(PATTERN_LENGTH),
        "mos": list(pattern.values),
        "n_sessions": pattern.n_sessions_aggregated,
    })


def curve_frame(model: AutoencoderModel) -> pd.DataFrame:
    return pd.DataFrame([epoch.model_dump() for epoch in model.curve], columns=["epoch", "train_mse", "val_mse"])


def _model_payload(model: AutoencoderModel) -> Dict[str, object]:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "lstm_autoencoder",
        "hyper": model.hyper.model_dump(mode="json"),
        "seed": model.seed,
        "cell": None if model.cell is None else vars(model.cell).copy(),
        "split": model.split,
        "curve": [epoch.model_dump() for epoch in model.curve],
        "weights": {name: value.tolist() for name, value in sorted(model.parameters().items())},
    }


def _payload_hash(payload: Dict[str, object]) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")).hexdigest()


def model_to_dict(model: AutoencoderModel) -> Dict[str, object]:
    payload = _model_payload(model)
    return {**payload, "content_hash": _payload_hash(payload)}


def save_model(model: AutoencoderModel, path: Path) -> str:
    """
    Write the model as versioned JSON with a content hash.

    Returns:
        The content hash
    """
    document = model_to_dict(model)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(dumps_canonical(document))
    except OSError as e:
        raise ArtifactIOError(f"Failed to save model {path}: {e}", "write", str(path), e) from e
    return str(document["content_hash"])


def model_from_dict(document: Dict[str, object]) -> AutoencoderModel:
    """
    Rebuild a model and verify its content hash.

    Raises:
        ArtifactIOError: On version or hash mismatch
    """
    document = dict(document)
    expected = document.pop("content_hash", None)
    if document.get("format_version") != MODEL_FORMAT_VERSION:
        raise ArtifactIOError(f"unsupported model format {document.get('format_version')}", "read")
    if expected != _payload_hash(document):
        raise ArtifactIOError("model content hash mismatch", "verify")
    model = AutoencoderModel(PatternConfig(**document["hyper"]), int(document["seed"]))
    params = model.parameters()
    for name, value in document["weights"].items():
        params[name][...] = np.asarray(value, dtype=float).reshape(params[name].shape)
    cell = document.get("cell")
    model.cell = TrainingCell(**cell) if cell else None
    model.curve = [TrainingEpoch(**epoch) for epoch in document.get("curve", [])]
    model.split = dict(document.get("split") or {})
    return model


def load_model(path: Path) -> AutoencoderModel:
    """Read a model written by save_model."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactIOError(f"Failed to load model {path}: {e}", "read", str(path), e) from e
    return model_from_dict(document)
