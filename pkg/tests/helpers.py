"""Shared test harness pieces: detection loops and burst scenario builders."""

import numpy as np

from burstscaler.burst import BurstDetector, DetectorConfig
from burstscaler.forecast import (
    Forecaster,
    ForecasterConfig,
    IntervalForecast,
    fit_seasonal_quantile,
)
from burstscaler.synth import inject_bursts, periodic_trace, pick_burst_onsets
from burstscaler.trace import WorkloadTrace, window

MIN_BOUND = 1e-3


def run_detection(
    trace: WorkloadTrace,
    fc_config: ForecasterConfig,
    det_config: DetectorConfig,
    eval_start: int,
    forecaster: Forecaster | None = None,
) -> dict[int, bool]:
    """Standalone detection loop; returns {step index: verdict} for the eval region."""
    if forecaster is None:
        forecaster = fit_seasonal_quantile(trace.slice(0, eval_start), fc_config)
    detector = BurstDetector(det_config)
    flags: dict[int, bool] = {}
    for m in range(fc_config.input_length - 1, len(trace)):
        detector.observe(m, float(trace.values[m]))
        verdict = detector.detect(m)
        if m >= eval_start:
            flags[m] = verdict
        win = window(trace, m, fc_config.input_length)
        raw = forecaster.predict(win)
        detector.push_forecast(
            m, IntervalForecast(np.maximum(raw.triples, MIN_BOUND))
        )
    return flags


def burst_scenario(
    length=1200,
    eval_start=720,
    n_bursts=5,
    seed=0,
    duration=6,
    width_multiple=4.0,
    spike_height=400.0,
):
    """Periodic trace with recurring spikes, plus injected bursts sized as a
    multiple of the forecaster's interval width at each onset.

    Returns (clean trace, bursty trace, onsets, configs).
    """
    fc_config = ForecasterConfig(input_length=48, horizon=24, season_length=24)
    det_config = DetectorConfig()
    clean = periodic_trace(
        length,
        noise_std=20.0,
        noise_kind="uniform",
        spike_height=spike_height,
        seed=seed,
    )
    forecaster = fit_seasonal_quantile(clean.slice(0, eval_start), fc_config)
    onsets = pick_burst_onsets(
        length, n_bursts, start=eval_start + det_config.history_length + 8,
        min_gap=3 * duration + det_config.nearest_length, seed=seed + 1,
    )
    heights = []
    for onset in onsets:
        win = window(clean, onset - 1, fc_config.input_length)
        f = forecaster.predict(win)
        heights.append(width_multiple * float(f.up[0] - f.low[0]))
    bursty = inject_bursts(clean, onsets, np.array(heights), duration)
    return clean, bursty, onsets, fc_config, det_config
