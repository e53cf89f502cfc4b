"""Seeded synthetic workload generators for experiments and tests."""

from __future__ import annotations

import numpy as np

from .trace import HOUR_SECONDS, WorkloadTrace

# 2021-01-04 00:00 UTC, a Monday midnight, so calendar phases start clean
DEFAULT_START_TS = 1_609_718_400


def periodic_trace(
    length: int,
    season: int = 24,
    mean: float = 500.0,
    amplitude: float = 150.0,
    noise_std: float = 25.0,
    spike_height: float = 0.0,
    spike_phase: int = 18,
    seed: int = 0,
    start_ts: int = DEFAULT_START_TS,
    step: int = HOUR_SECONDS,
    noise_kind: str = "normal",
) -> WorkloadTrace:
    """Sinusoidal daily pattern with optional recurring spikes and iid noise.

    The spike recurs at the same phase every season, so it is part of the
    pattern, not a burst. noise_kind "uniform" draws bounded noise with the
    same standard deviation, useful when tail events must not occur.
    """
    rng = np.random.default_rng(seed)
    idx = np.arange(length)
    phase = idx % season
    values = mean + amplitude * np.sin(2.0 * np.pi * phase / season)
    if spike_height:
        values = values + np.where(phase == spike_phase, spike_height, 0.0)
    if noise_kind == "normal":
        noise = rng.normal(0.0, noise_std, size=length)
    elif noise_kind == "uniform":
        half_width = noise_std * np.sqrt(3.0)
        noise = rng.uniform(-half_width, half_width, size=length)
    else:
        raise ValueError(f"unknown noise kind {noise_kind!r}")
    values = values + noise
    values = np.maximum(values, 1.0)
    timestamps = start_ts + idx * step
    return WorkloadTrace(timestamps.astype(np.int64), values)


def random_walk_trace(
    length: int,
    start: float = 500.0,
    sigma: float = 25.0,
    lo: float = 50.0,
    hi: float = 1100.0,
    seed: int = 0,
    start_ts: int = DEFAULT_START_TS,
    step: int = HOUR_SECONDS,
) -> WorkloadTrace:
    """Reflected Gaussian random walk bounded to [lo, hi]."""
    rng = np.random.default_rng(seed)
    values = np.empty(length)
    v = start
    for i in range(length):
        v += rng.normal(0.0, sigma)
        if v < lo:
            v = lo + (lo - v)
        if v > hi:
            v = hi - (v - hi)
        values[i] = min(max(v, lo), hi)
    timestamps = start_ts + np.arange(length) * step
    return WorkloadTrace(timestamps.astype(np.int64), values)


def inject_bursts(
    trace: WorkloadTrace,
    onsets: list[int],
    height: float | np.ndarray,
    duration: int = 8,
) -> WorkloadTrace:
    """Add flat additive bursts of the given height starting at each onset."""
    heights = np.broadcast_to(np.asarray(height, dtype=np.float64), (len(onsets),))
    values = trace.values.copy()
    for onset, h in zip(onsets, heights):
        if not 0 <= onset < len(values):
            raise ValueError(f"onset {onset} out of range")
        values[onset : onset + duration] += h
    return trace.with_values(values)


def pick_burst_onsets(
    length: int,
    count: int,
    start: int,
    min_gap: int,
    seed: int = 0,
    margin: int = 12,
) -> list[int]:
    """Random onsets in [start, length - margin) spaced at least min_gap apart."""
    rng = np.random.default_rng(seed)
    onsets: list[int] = []
    attempts = 0
    while len(onsets) < count:
        attempts += 1
        if attempts > 10_000:
            raise ValueError("cannot place that many onsets with the given spacing")
        candidate = int(rng.integers(start, length - margin))
        if all(abs(candidate - o) >= min_gap for o in onsets):
            onsets.append(candidate)
    return sorted(onsets)


def standard_suite(
    length: int = 1440,
    seed: int = 0,
    burst_height: float = 450.0,
    burst_duration: int = 8,
    n_bursts: int = 6,
    eval_fraction: float = 0.6,
) -> dict[str, WorkloadTrace]:
    """The three-trace comparison suite: periodic, periodic+bursts, random walk.

    Traces are generated directly on the standardized scale (mean near 500);
    periodic noise is bounded (uniform) so the clean trace carries no
    tail events that read as bursts.
    """
    periodic = periodic_trace(length, noise_std=20.0, noise_kind="uniform", seed=seed)
    eval_start = int(length * eval_fraction)
    onsets = pick_burst_onsets(
        length, n_bursts, start=eval_start + 40, min_gap=3 * burst_duration,
        seed=seed + 1,
    )
    bursty = inject_bursts(
        periodic_trace(
            length, noise_std=20.0, noise_kind="uniform",
            spike_height=200.0, seed=seed + 2,
        ),
        onsets,
        burst_height,
        burst_duration,
    )
    walk = random_walk_trace(length, seed=seed + 3)
    return {"periodic": periodic, "periodic_bursts": bursty, "random_walk": walk}
