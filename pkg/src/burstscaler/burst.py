"""Prediction-based burst detection and AR(2) + bootstrap burst overestimation.

A workload value is a burst when it deviates from the rolling multi-step
prediction intervals beyond configured thresholds; detected bursts are
handled by extrapolating the short-term trend with an AR(2) model and
adding a bootstrapped upper residual bound.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .forecast import IntervalForecast, quantile_loss

logger = logging.getLogger(__name__)


class BurstError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    history_length: int = 24  # k: issue times compared per decision
    nearest_length: int = 3  # n: window of most recent proposals / steps
    distance_threshold: float = 0.1
    loss_threshold: float = 0.1

    def __post_init__(self) -> None:
        if not self.history_length > self.nearest_length >= 1:
            raise BurstError(
                f"need history_length > nearest_length >= 1, got "
                f"{self.history_length}, {self.nearest_length}"
            )
        if self.distance_threshold <= 0 or self.loss_threshold <= 0:
            raise BurstError("thresholds must be positive")

    def to_dict(self) -> dict:
        return {
            "history_length": self.history_length,
            "nearest_length": self.nearest_length,
            "distance_threshold": self.distance_threshold,
            "loss_threshold": self.loss_threshold,
        }


@dataclass
class DeviationStats:
    """Per issue time (oldest first): mean distances, outlier counts, losses."""

    distances: np.ndarray
    outlier_counts: np.ndarray
    losses: np.ndarray


def deviation_distance(interval: tuple[float, float, float], y: float) -> float:
    """Relative distance of y from a (low, median, up) prediction interval.

    Zero iff y lies inside [low, up]; otherwise the overshoot relative to
    the violated bound. Requires 0 < low <= up.
    """
    low, _, up = interval
    if low <= 0 or up <= 0:
        raise BurstError(f"interval bounds must be positive, got ({low}, {up})")
    if low > up:
        raise BurstError(f"inverted interval ({low}, {up})")
    return max(y - up, 0.0) / up + max(low - y, 0.0) / low


def window_indices(t: int, j: int, n: int) -> tuple[int, int]:
    """1-based (start, end) horizon indexes checked for the forecast issued at j."""
    if not t - j >= 1:
        raise BurstError(f"issue time {j} not before current time {t}")
    i_e = t - j
    i_s = 1 if i_e <= n else i_e - n + 1
    return i_s, i_e


class DetectorState:
    """Rolling forecast/truth/burst-state histories for one autoscaled service.

    Holds the last k issued forecasts keyed by issue time, the realized
    workloads they covered, and the last k emitted burst verdicts.
    """

    def __init__(self, config: DetectorConfig):
        self.config = config
        self.forecasts: deque[tuple[int, IntervalForecast]] = deque(
            maxlen=config.history_length
        )
        self.truths: dict[int, float] = {}
        self.verdicts: deque[bool] = deque(maxlen=config.history_length)

    def record_truth(self, t: int, y: float) -> None:
        self.truths[t] = float(y)
        for old in [s for s in self.truths if s < t - self.config.history_length]:
            del self.truths[old]

    def record_forecast(self, t: int, forecast: IntervalForecast) -> None:
        if self.forecasts and t <= self.forecasts[-1][0]:
            raise BurstError(f"forecast issue times must increase, got {t}")
        self.forecasts.append((t, forecast))

    def record_verdict(self, verdict: bool) -> None:
        self.verdicts.append(bool(verdict))

    def warmed_up(self, t: int) -> bool:
        if len(self.forecasts) < self.config.history_length:
            return False
        # all required issue times [t-k, t-1] and truths up to t present
        issue_times = [j for j, _ in self.forecasts]
        if issue_times[0] > t - self.config.history_length or issue_times[-1] != t - 1:
            return False
        return all(s in self.truths for s in range(t - self.config.history_length + 1, t + 1))


def deviation_stats(state: DetectorState, config: DetectorConfig) -> DeviationStats:
    """Distances, outlier counts, and median pinball losses per issue time.

    The loss is normalized by max(truth, 1) so the configured threshold is
    scale-free, matching the relative form of the distance measure.
    """
    k, n = config.history_length, config.nearest_length
    if len(state.forecasts) < k:
        raise BurstError("detector state not warmed up")
    issue_times = [j for j, _ in state.forecasts]
    t = issue_times[-1] + 1
    distances = np.zeros(k)
    counts = np.zeros(k, dtype=np.int64)
    losses = np.zeros(k)
    for idx, (j, forecast) in enumerate(state.forecasts):
        i_s, i_e = window_indices(t, j, n)
        if i_e > forecast.horizon:
            raise BurstError(
                f"forecast horizon {forecast.horizon} shorter than required "
                f"index {i_e}; use horizon >= history_length"
            )
        d_sum = 0.0
        l_sum = 0.0
        outliers = 0
        for i in range(i_s, i_e + 1):
            y = state.truths.get(j + i)
            if y is None:
                raise BurstError(f"missing truth for step {j + i}")
            triple = forecast.triples[i - 1]
            d = deviation_distance((triple[0], triple[1], triple[2]), y)
            d_sum += d
            if d > 0.0:
                outliers += 1
            l_sum += quantile_loss(y, triple[1], 0.5) / max(y, 1.0)
        width = i_e - i_s + 1
        distances[idx] = d_sum / width
        counts[idx] = outliers
        losses[idx] = l_sum / width
    return DeviationStats(distances, counts, losses)


def burst_proposals(stats: DeviationStats, config: DetectorConfig) -> np.ndarray:
    """Per issue time: bursty if distance and outlier count, or loss, exceed thresholds."""
    half_n = config.nearest_length / 2.0
    return (
        (stats.distances > config.distance_threshold)
        & (stats.outlier_counts >= half_n)
    ) | (stats.losses > config.loss_threshold)


def detect_burst(
    proposals: np.ndarray,
    outlier_counts: np.ndarray,
    states: np.ndarray,
    config: DetectorConfig,
) -> bool:
    """Combine proposals with the previous burst state into one verdict.

    Out of a burst, both recent proposals and a fresh outlier are required;
    inside one, either suffices, and failing that a majority vote over the
    proposals from previously bursty steps decides.
    """
    v = np.asarray(proposals, dtype=bool)
    o = np.asarray(outlier_counts)
    s = np.asarray(states, dtype=bool)
    if len(v) != len(s):
        raise BurstError(f"proposals ({len(v)}) and states ({len(s)}) must align")
    n = config.nearest_length
    recent = int(np.sum(v[-n:]))
    if not s[-1]:
        return recent > 0 and o[-1] > 0
    if recent > 0 or o[-1] > 0:
        return True
    filtered = v[s]
    return int(np.sum(filtered[-n:])) >= n / 2.0


# --- AR(2) trend model and bootstrap overestimation -------------------------

AR2_MIN_OBSERVATIONS = 8


@dataclass
class Ar2Model:
    """Second-order autoregression; defaults are a linear extrapolator."""

    intercept: float = 0.0
    phi1: float = 2.0
    phi2: float = -1.0
    fitted: bool = False

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "phi1": self.phi1,
            "phi2": self.phi2,
            "fitted": self.fitted,
        }


def fit_ar2(observations: np.ndarray) -> Ar2Model:
    """Least-squares fit of y_t on (1, y_{t-1}, y_{t-2}).

    Gaussian conditional maximum likelihood has the same optimum, so the
    closed form is used. A constant series has no usable design and falls
    back to (c=mean, phi=0).
    """
    obs = np.asarray(observations, dtype=np.float64)
    if len(obs) < AR2_MIN_OBSERVATIONS:
        raise BurstError(
            f"need at least {AR2_MIN_OBSERVATIONS} observations, got {len(obs)}"
        )
    if np.ptp(obs) == 0.0:
        return Ar2Model(intercept=float(obs[0]), phi1=0.0, phi2=0.0, fitted=True)
    design = np.column_stack([np.ones(len(obs) - 2), obs[1:-1], obs[:-2]])
    target = obs[2:]
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return Ar2Model(
        intercept=float(coef[0]), phi1=float(coef[1]), phi2=float(coef[2]), fitted=True
    )


def ar_predict(model: Ar2Model, y_t: float, y_prev: float) -> float:
    """One-step-ahead prediction c + phi1 * y_t + phi2 * y_prev."""
    return model.intercept + model.phi1 * y_t + model.phi2 * y_prev


def bootstrap_upper_ci(
    residuals: np.ndarray,
    iterations: int = 100,
    percentile: float = 95.0,
    ci: float = 95.0,
    rng: np.random.Generator | None = None,
) -> float:
    """Upper bound of the two-sided CI for the residual percentile, by bootstrap.

    Resamples the residuals with replacement `iterations` times, takes the
    given percentile of each resample, and returns the upper CI bound of
    those statistics.
    """
    res = np.asarray(residuals, dtype=np.float64)
    if len(res) < 2:
        raise BurstError(f"need at least 2 residuals, got {len(res)}")
    if rng is None:
        rng = np.random.default_rng(0)
    idx = rng.integers(0, len(res), size=(iterations, len(res)))
    stats = np.percentile(res[idx], percentile, axis=1)
    upper_q = 100.0 - (100.0 - ci) / 2.0
    return float(np.percentile(stats, upper_q))


def overestimate_burst(
    model: Ar2Model,
    residuals: np.ndarray,
    y_t: float,
    y_prev: float,
    floor: float,
    iterations: int = 100,
    rng: np.random.Generator | None = None,
) -> float:
    """AR prediction plus the bootstrapped residual bound, floored at `floor`.

    The floor is the most recently observed workload: during an onset the
    AR fit may lag the surge, and the plan must never fall below demand
    already seen.
    """
    res = np.asarray(residuals, dtype=np.float64)
    predicted = ar_predict(model, y_t, y_prev)
    if len(res) >= 2:
        correction = bootstrap_upper_ci(res, iterations=iterations, rng=rng)
    elif len(res) == 1:
        correction = max(float(res[0]), 0.0)
    else:
        correction = 0.0
    return max(predicted + correction, floor)


class BurstDetector:
    """Stateful per-service detector driving the state update sequence.

    Call order per time step t: observe(t, y) with the measured workload,
    then detect(t) for the verdict (False until warmed up), then
    push_forecast(t, f) with the forecast issued at t.
    """

    def __init__(self, config: DetectorConfig):
        self.config = config
        self.state = DetectorState(config)
        self.last_record: dict | None = None

    def observe(self, t: int, y: float) -> None:
        self.state.record_truth(t, y)

    def push_forecast(self, t: int, forecast: IntervalForecast) -> None:
        self.state.record_forecast(t, forecast)

    def detect(self, t: int) -> bool:
        if not self.state.warmed_up(t):
            verdict = False
            self.last_record = {"t": t, "warmed_up": False, "verdict": False}
        else:
            stats = deviation_stats(self.state, self.config)
            proposals = burst_proposals(stats, self.config)
            verdict = detect_burst(
                proposals,
                stats.outlier_counts,
                np.array(self.state.verdicts, dtype=bool),
                self.config,
            )
            self.last_record = {
                "t": t,
                "warmed_up": True,
                "distance": float(stats.distances[-1]),
                "outliers": int(stats.outlier_counts[-1]),
                "loss": float(stats.losses[-1]),
                "proposal": bool(proposals[-1]),
                "verdict": bool(verdict),
            }
        self.state.record_verdict(verdict)
        return verdict


class BurstHandler:
    """Maintains the AR(2) trend model and one-step residuals online.

    Residuals are pure one-step-ahead errors: each observation is first
    scored against the model fitted before it arrived, then the model is
    refit on the trailing window.
    """

    def __init__(
        self,
        fit_window: int = 168,
        residual_window: int = 24,
        bootstrap_iterations: int = 100,
        seed: int = 0,
    ):
        self.fit_window = fit_window
        self.bootstrap_iterations = bootstrap_iterations
        self.model = Ar2Model()
        self.values: deque[float] = deque(maxlen=fit_window)
        self.residuals: deque[float] = deque(maxlen=residual_window)
        self.rng = np.random.default_rng(seed)

    def observe(self, y: float) -> None:
        if len(self.values) >= 2:
            predicted = ar_predict(self.model, self.values[-1], self.values[-2])
            self.residuals.append(float(y) - predicted)
        self.values.append(float(y))
        if len(self.values) >= AR2_MIN_OBSERVATIONS:
            self.model = fit_ar2(np.array(self.values))

    def overestimate(self, steps: int = 1) -> float:
        """Overestimated workload `steps` ahead of the last observation.

        For steps > 1 the AR recursion is iterated, feeding predictions
        back in; the bootstrapped residual bound and the last-observed
        floor are applied once at the end.
        """
        if len(self.values) < 2:
            raise BurstError("need at least 2 observations to overestimate")
        if steps < 1:
            raise BurstError("steps must be >= 1")
        y_t, y_prev = self.values[-1], self.values[-2]
        for _ in range(steps - 1):
            y_t, y_prev = ar_predict(self.model, y_t, y_prev), y_t
        return overestimate_burst(
            self.model,
            np.array(self.residuals),
            y_t,
            y_prev,
            floor=self.values[-1],
            iterations=self.bootstrap_iterations,
            rng=self.rng,
        )
