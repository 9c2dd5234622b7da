"""
Shared fixtures and builders for the QoE pipeline tests.

Builders create small hand-made sessions so expected values can be worked
out by hand; the generator fixtures keep synthetic runs small.
"""

import tempfile
from pathlib import Path
from typing import Callable, Optional, Sequence

import pytest

from src.core.config import GenConfig, PatternConfig, PredictorConfig
from src.qoe.models import Dataset, KpiSample, MosSample, Session


def make_session(
    sid: str,
    n_mos: int = 15,
    mos: Optional[Sequence[float]] = None,
    snr: Optional[Callable[[int], Optional[float]]] = None,
    first_mos_t: float = 4.0,
    period: float = 4.0,
    n_kpi: int = 60,
    meta: Optional[dict] = None,
) -> Session:
    """
    Session with one KPI sample per second and evenly spaced MOS samples.

    Args:
        sid: Session id
        n_mos: Number of MOS samples
        mos: MOS values (4.0 everywhere when None)
        snr: t -> SNR, None for an absent value (10.0 when None)
        first_mos_t: Timestamp of the first MOS sample
        period: Spacing of the MOS samples
        n_kpi: KPI samples at t = 1..n_kpi
    """
    snr = snr or (lambda t: 10.0)
    mos = list(mos) if mos is not None else [4.0] * n_mos
    kpi = tuple(
        KpiSample(t=float(t), rsrp=-90.0, rsrq=-10.0, snr=snr(t), prb=40.0)
        for t in range(1, n_kpi + 1)
    )
    samples = tuple(MosSample(t=first_mos_t + period * i, mos=value) for i, value in enumerate(mos))
    return Session(id=sid, kpi=kpi, mos=samples, meta=meta or {})


def make_dataset(sessions: Sequence[Session], provenance: str = "test") -> Dataset:
    return Dataset(sessions=tuple(sessions), provenance=provenance)


@pytest.fixture
def tmp_dir():
    with tempfile.TemporaryDirectory() as tmp:
        yield Path(tmp)


@pytest.fixture
def small_gen_config():
    """Twenty sessions, two of them anomalous."""
    return GenConfig(n_sessions=20, anomaly_fraction=0.1, seed=7)


@pytest.fixture
def tiny_pattern_config():
    """Single grid cell with few epochs for fast training runs."""
    return PatternConfig(
        encoder_width=8,
        epochs_grid=[3],
        batch_size_grid=[4],
        learning_rate_grid=[1e-2],
        dropout_grid=[0.0],
        grid_search=False,
    )


@pytest.fixture
def small_predictor_config():
    return PredictorConfig(n_trees=5, n_stages=10, n_trials=3, n_folds=2, min_samples_leaf=1)
