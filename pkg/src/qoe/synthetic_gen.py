"""
Synthetic drive-test session generator.

Sessions are simulated second by second: an autoregressive SNR process around
a scenario mean drives PRB, RSRP and RSRQ through affine maps, SNR and PRB
give a link throughput, and a small adaptive-streaming player turns the
throughput into a per-second MOS. MOS samples are window means of that
per-second MOS taken every 4-5 seconds.

The player is monotone by construction: a better link never produces a lower
MOS at any second. Its buffer is accounted in lowest-rung media seconds, it
resumes playback as soon as any media is buffered, and rung decisions only
ever compare monotone quantities.
"""

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.artifacts import OperationContext
from ..core.config import GenConfig
from ..core.constants import (
    KPI_RANGES,
    MOS_MAX,
    MOS_MIN,
    AnomalyShape,
    Kpi,
    Scenario,
)
from ..core.exceptions import DataValidationError
from .models import Dataset, KpiSample, MosSample, Session

logger = logging.getLogger(__name__)

__all__ = [
    "GenConfig",
    "PlayerState",
    "PlaybackTrace",
    "generate",
    "mos_oracle",
    "simulate_playback",
    "throughput_kbps",
    "ideal_trajectory",
    "mos_sample_times",
]

DECIMALS = 6


@dataclass
class PlayerState:
    """Playback state after one simulated second."""

    buffer_s: float = 0.0
    current_rung: int = 0
    stalled: bool = False
    startup_done: bool = False


@dataclass(frozen=True)
class PlaybackTrace:
    """Per-second player outputs."""

    rung: np.ndarray
    buffer_s: np.ndarray
    stall: np.ndarray
    mos: np.ndarray


def throughput_kbps(snr: np.ndarray, prb: np.ndarray, config: GenConfig) -> np.ndarray:
    """
    Link throughput from SNR (dB) and allocated PRBs.

    Shannon-style capacity scaled by the PRB share; non-decreasing in both
    arguments.
    """
    snr = np.asarray(snr, dtype=float)
    prb = np.clip(np.asarray(prb, dtype=float), 0.0, None)
    return config.throughput_scale_kbps * (prb / 100.0) * np.log2(1.0 + np.power(10.0, snr / 10.0))


class Player:
    """
    Adaptive-bitrate player stepping once per second.

    Buffer occupancy is counted in seconds of lowest-rung media, so the
    buffer recurrence depends on throughput alone.
    """

    def __init__(self, config: GenConfig) -> None:
        self.config = config
        self.bitrates = np.array([rung[0] for rung in config.abr_ladder], dtype=float)
        self.top = len(self.bitrates) - 1
        self.state = PlayerState()
        self._ewma: Optional[float] = None

    def _rate_rung(self, estimate: float) -> int:
        affordable = np.nonzero(self.bitrates <= self.config.safety_factor * estimate)[0]
        return int(affordable[-1]) if len(affordable) else 0

    def step(self, throughput: float) -> Tuple[int, float]:
        """
        Advance one second.

        Args:
            throughput: Link throughput during this second (kbps)

        Returns:
            (rung played this second, stalled fraction of the second)
        """
        cfg = self.config
        state = self.state
        alpha = cfg.throughput_ewma
        self._ewma = throughput if self._ewma is None else alpha * throughput + (1.0 - alpha) * self._ewma
        # Downswitch on the instantaneous rate, upswitch on the smoothed one
        estimate = min(throughput, self._ewma)

        cap = state.current_rung
        if state.buffer_s < cfg.down_buffer_s:
            cap -= 1
        elif state.startup_done and state.buffer_s > cfg.up_buffer_s:
            cap += 1
        rung = int(np.clip(min(self._rate_rung(estimate), cap), 0, self.top))

        # No stall-exit hold: playback resumes in the first second with buffered media,
        # which keeps MOS non-decreasing in throughput.
        available = state.buffer_s + throughput / self.bitrates[0]
        played = min(1.0, available)
        stall = 1.0 - played
        buffer_s = min(cfg.buffer_cap_s, max(0.0, available - 1.0))

        self.state = PlayerState(
            buffer_s=buffer_s,
            current_rung=rung,
            stalled=stall > 0.0,
            startup_done=state.startup_done or buffer_s >= cfg.startup_buffer_s,
        )
        return rung, stall


def simulate_playback(snr: Sequence[float], prb: Sequence[float], config: GenConfig) -> PlaybackTrace:
    """
    Run the player over per-second SNR and PRB series.

    Raises:
        DataValidationError: If the series are empty or of unequal length
    """
    snr = np.asarray(snr, dtype=float)
    prb = np.asarray(prb, dtype=float)
    if snr.size == 0 or prb.size == 0:
        raise DataValidationError("empty input series", field="snr_series", validation_rule="non-empty")
    if snr.shape != prb.shape:
        raise DataValidationError("snr and prb series must have equal length", field="prb_series", value=int(prb.size))

    qualities = np.array([rung[1] for rung in config.abr_ladder], dtype=float)
    rates = throughput_kbps(snr, prb, config)
    player = Player(config)
    n = len(rates)
    rung = np.zeros(n, dtype=int)
    buffer_s = np.zeros(n)
    stall = np.zeros(n)
    for i, rate in enumerate(rates):
        rung[i], stall[i] = player.step(float(rate))
        buffer_s[i] = player.state.buffer_s

    seconds = np.arange(n, dtype=float)
    ramp = config.startup_penalty * np.clip(1.0 - seconds / config.startup_ramp_s, 0.0, None)
    mos = np.clip(qualities[rung] - ramp - config.stall_penalty * stall, MOS_MIN, MOS_MAX)
    return PlaybackTrace(rung=rung, buffer_s=buffer_s, stall=stall, mos=mos)


def mos_sample_times(config: GenConfig, rng: np.random.Generator, horizon_s: Optional[float] = None) -> np.ndarray:
    """First sample after U[min,max] seconds, then every U[min,max] seconds up to the horizon."""
    horizon = config.duration_s if horizon_s is None else horizon_s
    times: List[float] = []
    t = rng.uniform(config.mos_period_min_s, config.mos_period_max_s)
    while t <= horizon:
        times.append(round(t, DECIMALS))
        t += rng.uniform(config.mos_period_min_s, config.mos_period_max_s)
    return np.array(times, dtype=float)


def window_means(per_second: np.ndarray, sample_times: Sequence[float]) -> np.ndarray:
    """Mean of the seconds starting in [previous sample, sample)."""
    values = []
    previous = 0.0
    for t in sample_times:
        start = int(math.ceil(previous - 1e-9))
        stop = min(int(math.ceil(t - 1e-9)), len(per_second))
        window = per_second[start:stop] if stop > start else per_second[max(stop - 1, 0):stop]
        values.append(float(np.mean(window)))
        previous = t
    return np.array(values)


def mos_oracle(
    snr_series: Sequence[float],
    prb_series: Sequence[float],
    config: GenConfig,
    sample_times: Optional[Sequence[float]] = None
) -> List[MosSample]:
    """
    Noise-free MOS samples for per-second SNR and PRB series.

    Args:
        snr_series: Per-second SNR (dB)
        prb_series: Per-second allocated PRBs
        config: Generator configuration
        sample_times: MOS timestamps; drawn from ``config.seed`` when omitted

    Returns:
        MOS samples in [1, 5]

    Raises:
        DataValidationError: If the input series are empty
    """
    trace = simulate_playback(snr_series, prb_series, config)
    horizon = float(len(trace.mos))
    if sample_times is None:
        sample_times = mos_sample_times(config, np.random.default_rng([config.seed]), horizon)
    times = [t for t in sample_times if 0.0 < t <= horizon]
    values = window_means(trace.mos, times)
    return [MosSample(t=float(t), mos=float(np.clip(v, MOS_MIN, MOS_MAX))) for t, v in zip(times, values)]


def ideal_trajectory(config: GenConfig, scenario: Scenario = Scenario.NORMAL) -> np.ndarray:
    """Per-second MOS at constant scenario-mean SNR and the matching mean PRB."""
    n = int(round(config.duration_s / config.kpi_period_s))
    process = config.snr_process
    mean = process.mean_normal if Scenario(scenario) == Scenario.NORMAL else process.mean_anomalous
    snr = np.full(n, mean)
    prb = np.full(n, config.prb_mean + config.prb_snr_slope * (mean - process.mean_normal))
    return simulate_playback(snr, np.clip(prb, 0.0, config.prb_max), config).mos


def _snr_means(n: int, shape: Optional[str], config: GenConfig, rng: np.random.Generator) -> np.ndarray:
    process = config.snr_process
    means = np.full(n, process.mean_normal)
    seconds = np.arange(n, dtype=float)
    if shape is None:
        return means
    if shape == AnomalyShape.LATE_FADE.value:
        onset = rng.uniform(*config.late_fade_onset)
        deep = seconds >= onset
    elif shape == AnomalyShape.EARLY_FADE.value:
        onset = rng.uniform(*config.early_fade_onset)
        recovery = rng.uniform(*config.early_fade_recovery)
        deep = (seconds >= onset) & (seconds < recovery)
    else:
        onset = rng.uniform(*config.oscillation_onset)
        phase = np.mod(seconds - onset, config.oscillation_period_s)
        deep = (seconds >= onset) & (phase < config.oscillation_deep_s)
    means[deep] = process.mean_anomalous
    return means


def _ar1(means: np.ndarray, config: GenConfig, rng: np.random.Generator) -> np.ndarray:
    """AR(1) deviations around a time-varying mean, started from stationarity."""
    a = config.snr_process.ar_coefficient
    sigma = config.snr_process.noise_std
    deviation = rng.normal(0.0, sigma / math.sqrt(1.0 - a * a))
    values = np.empty(len(means))
    for i, mean in enumerate(means):
        if i > 0:
            deviation = a * deviation + rng.normal(0.0, sigma)
        values[i] = mean + deviation
    low, high = KPI_RANGES[Kpi.SNR.value]
    return np.clip(values, low, high)


def _generate_session(index: int, anomalous: bool, config: GenConfig) -> Session:
    rng = np.random.default_rng([config.seed, index])
    n = int(round(config.duration_s / config.kpi_period_s))
    shape = str(rng.choice(config.anomaly_shapes)) if anomalous else None

    snr = np.round(_ar1(_snr_means(n, shape, config, rng), config, rng), DECIMALS)
    mean_normal = config.snr_process.mean_normal
    prb = np.clip(
        config.prb_mean + config.prb_snr_slope * (snr - mean_normal) + rng.normal(0.0, config.prb_noise_std, n),
        0.0,
        config.prb_max,
    )
    prb = np.round(prb, DECIMALS)
    rsrp = np.round(np.clip(
        config.rsrp_intercept + config.rsrp_slope * snr + rng.normal(0.0, config.rsrp_noise_std, n),
        *KPI_RANGES[Kpi.RSRP.value],
    ), DECIMALS)
    rsrq = np.round(np.clip(
        config.rsrq_intercept + config.rsrq_slope * snr + rng.normal(0.0, config.rsrq_noise_std, n),
        *KPI_RANGES[Kpi.RSRQ.value],
    ), DECIMALS)

    sample_times = mos_sample_times(config, rng)
    clean = mos_oracle(snr, prb, config, sample_times)
    # Observation noise comes from its own stream so noise-free runs share every other draw
    noise_rng = np.random.default_rng([config.seed, index, 1])
    mos_samples = []
    for sample in clean:
        noisy = sample.mos + noise_rng.normal(0.0, config.mos_noise_std) if config.mos_noise_std > 0 else sample.mos
        mos_samples.append(MosSample(t=sample.t, mos=round(float(np.clip(noisy, MOS_MIN, MOS_MAX)), DECIMALS)))

    kpi_samples = tuple(
        KpiSample(
            t=round((i + 1) * config.kpi_period_s, DECIMALS),
            rsrp=float(rsrp[i]),
            rsrq=float(rsrq[i]),
            snr=float(snr[i]),
            prb=float(prb[i]),
        )
        for i in range(n)
    )
    meta = {
        "scenario": (Scenario.ANOMALOUS if anomalous else Scenario.NORMAL).value,
        "shape": shape or "none",
    }
    return Session(id=f"s{index:05d}", kpi=kpi_samples, mos=tuple(mos_samples), meta=meta)


def anomalous_count(config: GenConfig) -> int:
    """round(anomaly_fraction * n_sessions), half rounded up; 0 when below one session."""
    expected = config.anomaly_fraction * config.n_sessions
    if 0 < expected < 1:
        return 0
    return int(math.floor(expected + 0.5))


def config_digest(config: GenConfig) -> str:
    return hashlib.sha256(config.model_dump_json().encode("utf-8")).hexdigest()


def generate(config: GenConfig) -> Dataset:
    """
    Generate a synthetic Dataset.

    Deterministic for a given config: every session draws from its own
    sub-seed ``(seed, index)``, so thread-pool generation is order-independent.

    Args:
        config: Generator configuration

    Returns:
        Dataset whose sessions carry ``scenario`` and ``shape`` tags
    """
    context = OperationContext("generate", f"seed={config.seed}")
    context.log_start(f"Generating {config.n_sessions} sessions", anomaly_fraction=config.anomaly_fraction)

    expected = config.anomaly_fraction * config.n_sessions
    if 0 < expected < 1:
        context.log_warning(
            f"anomaly_fraction * n_sessions = {expected:.4f} < 1; generating zero anomalous sessions",
            expected_anomalous=expected,
        )
    n_anomalous = anomalous_count(config)
    chosen = np.random.default_rng([config.seed]).permutation(config.n_sessions)[:n_anomalous]
    flags = np.zeros(config.n_sessions, dtype=bool)
    flags[chosen] = True

    def build(index: int) -> Session:
        return _generate_session(index, bool(flags[index]), config)

    if config.n_workers > 1:
        with ThreadPoolExecutor(max_workers=config.n_workers) as pool:
            sessions = list(pool.map(build, range(config.n_sessions)))
    else:
        sessions = [build(i) for i in range(config.n_sessions)]

    dataset = Dataset(
        sessions=tuple(sessions),
        provenance=f"synthetic:seed={config.seed}:config={config_digest(config)[:16]}",
    )
    context.log_success(f"Generated {len(sessions)} sessions", n_anomalous=n_anomalous)
    return dataset
