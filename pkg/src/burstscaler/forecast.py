"""Interval workload forecasting: (low, median, up) quantile triples per step.

Two forecasters share one contract: a seasonal-empirical baseline that
serves per-phase historical quantiles, and a direct linear quantile
regressor trained by subgradient descent on pinball loss.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .trace import (
    DEFAULT_TEMPORAL_TYPES,
    InputWindow,
    TraceError,
    WorkloadTrace,
    time_features,
)

logger = logging.getLogger(__name__)

FORECAST_FORMAT_VERSION = 1


class ForecastError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """Training loss blew past 10x its initial value."""

    def __init__(self, message: str, loss_history: list[float]):
        super().__init__(message)
        self.loss_history = loss_history


@dataclass(frozen=True)
class ForecasterConfig:
    input_length: int = 720  # history window fed to predict()
    horizon: int = 168  # steps forecast per call
    quantiles: tuple[float, ...] = (0.1, 0.5, 0.9)
    season_length: int = 24
    learning_rate: float = 0.1
    max_epochs: int = 300
    plateau_tol: float = 1e-6
    plateau_patience: int = 25

    def __post_init__(self) -> None:
        if self.input_length < 1 or self.horizon < 1:
            raise ForecastError("input_length and horizon must be >= 1")
        qs = tuple(self.quantiles)
        if any(not (0.0 < q < 1.0) for q in qs):
            raise ForecastError(f"quantiles must lie in (0, 1): {qs}")
        if 0.5 not in qs:
            raise ForecastError("quantile set must contain the median 0.5")
        if list(qs) != sorted(qs):
            raise ForecastError("quantiles must be sorted ascending")
        if self.season_length < 1:
            raise ForecastError("season_length must be >= 1")

    def to_dict(self) -> dict:
        return {
            "input_length": self.input_length,
            "horizon": self.horizon,
            "quantiles": list(self.quantiles),
            "season_length": self.season_length,
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "plateau_tol": self.plateau_tol,
            "plateau_patience": self.plateau_patience,
        }

    @staticmethod
    def from_dict(d: dict) -> "ForecasterConfig":
        d = dict(d)
        d["quantiles"] = tuple(d.get("quantiles", (0.1, 0.5, 0.9)))
        return ForecasterConfig(**d)


@dataclass(frozen=True)
class IntervalForecast:
    """Per-step (low, median, up) triples; rows sorted so low <= median <= up."""

    triples: np.ndarray  # shape (horizon, 3)

    def __post_init__(self) -> None:
        arr = np.asarray(self.triples, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ForecastError(f"expected shape (horizon, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ForecastError("non-finite forecast values")
        if np.any(arr[:, 0] > arr[:, 1]) or np.any(arr[:, 1] > arr[:, 2]):
            raise ForecastError("quantile crossing: use from_raw to repair")
        object.__setattr__(self, "triples", arr)

    @staticmethod
    def from_raw(raw: np.ndarray) -> "IntervalForecast":
        """Repair quantile crossings by sorting each step's triple."""
        return IntervalForecast(np.sort(np.asarray(raw, dtype=np.float64), axis=1))

    @property
    def horizon(self) -> int:
        return self.triples.shape[0]

    @property
    def low(self) -> np.ndarray:
        return self.triples[:, 0]

    @property
    def median(self) -> np.ndarray:
        return self.triples[:, 1]

    @property
    def up(self) -> np.ndarray:
        return self.triples[:, 2]


def quantile_loss(y: float, y_hat: float, q: float) -> float:
    """Pinball loss: q * max(y - y_hat, 0) + (1 - q) * max(y_hat - y, 0)."""
    if not 0.0 < q < 1.0:
        raise ForecastError(f"quantile {q} outside (0, 1)")
    return q * max(y - y_hat, 0.0) + (1.0 - q) * max(y_hat - y, 0.0)


def aggregate_quantile_loss(
    truth: np.ndarray,
    forecast: IntervalForecast,
    quantiles: tuple[float, ...] = (0.1, 0.5, 0.9),
) -> float:
    """Joint interval loss: sum of pinball terms over steps, averaged over quantiles."""
    truth = np.asarray(truth, dtype=np.float64)
    if len(truth) != forecast.horizon:
        raise ForecastError(
            f"length mismatch: {len(truth)} truths vs horizon {forecast.horizon}"
        )
    if len(quantiles) != forecast.triples.shape[1]:
        raise ForecastError("quantile count does not match forecast columns")
    total = 0.0
    for i in range(forecast.horizon):
        for col, q in enumerate(quantiles):
            total += quantile_loss(truth[i], forecast.triples[i, col], q)
    return total / len(quantiles)


class Forecaster:
    """Contract: deterministic predict(window) -> IntervalForecast."""

    kind = "abstract"
    config: ForecasterConfig

    def predict(self, win: InputWindow) -> IntervalForecast:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _check_window(self, win: InputWindow) -> None:
        if len(win) != self.config.input_length:
            raise ForecastError(
                f"window length {len(win)} != configured {self.config.input_length}"
            )


def _phase_of(timestamp: int, step: int, season: int) -> int:
    return int((timestamp // step) % season)


class SeasonalQuantileForecaster(Forecaster):
    """Serves the empirical quantiles of training values sharing a phase.

    Phase is derived from the timestamp (timestamp // step mod season), so
    a forecast never depends on the window contents — only on where the
    window ends in the seasonal cycle.
    """

    kind = "seasonal"

    def __init__(self, config: ForecasterConfig, phase_triples: np.ndarray, step: int):
        self.config = config
        self.phase_triples = np.asarray(phase_triples, dtype=np.float64)
        self.step = int(step)

    def predict(self, win: InputWindow) -> IntervalForecast:
        self._check_window(win)
        season = self.config.season_length
        raw = np.empty((self.config.horizon, 3))
        for i in range(1, self.config.horizon + 1):
            ts = win.end_timestamp + i * self.step
            raw[i - 1] = self.phase_triples[_phase_of(ts, self.step, season)]
        return IntervalForecast.from_raw(raw)

    def to_dict(self) -> dict:
        return {
            "version": FORECAST_FORMAT_VERSION,
            "kind": self.kind,
            "config": self.config.to_dict(),
            "step": self.step,
            "phase_triples": self.phase_triples.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "SeasonalQuantileForecaster":
        return SeasonalQuantileForecaster(
            ForecasterConfig.from_dict(d["config"]),
            np.array(d["phase_triples"], dtype=np.float64),
            d["step"],
        )


def fit_seasonal_quantile(
    trace: WorkloadTrace, config: ForecasterConfig
) -> SeasonalQuantileForecaster:
    """Group training values by phase and store their empirical quantiles."""
    season = config.season_length
    if len(trace) < 3 * season:
        raise ForecastError(
            f"need at least {3 * season} points (3 seasons), got {len(trace)}"
        )
    phases = (trace.timestamps // trace.step) % season
    triples = np.empty((season, 3))
    for phase in range(season):
        vals = trace.values[phases == phase]
        if len(vals) == 0:
            raise ForecastError(f"no training values for phase {phase}")
        triples[phase] = np.quantile(vals, config.quantiles)
    return SeasonalQuantileForecaster(config, triples, trace.step)


class LinearQuantileForecaster(Forecaster):
    """One linear model per (horizon step, quantile) on lag + calendar features.

    Features per forecast origin t: values at lags {1, 2, season, 2*season}
    back from t+1, the target timestamp's calendar features, and an
    intercept. Features and targets are standardized internally; weights
    live in standardized space.
    """

    kind = "linear"

    def __init__(
        self,
        config: ForecasterConfig,
        weights: np.ndarray,  # (horizon, n_quantiles, n_features)
        feature_mean: np.ndarray,
        feature_std: np.ndarray,
        target_mean: float,
        target_std: float,
        step: int,
        loss_history: list[float] | None = None,
    ):
        self.config = config
        self.weights = np.asarray(weights, dtype=np.float64)
        self.feature_mean = np.asarray(feature_mean, dtype=np.float64)
        self.feature_std = np.asarray(feature_std, dtype=np.float64)
        self.target_mean = float(target_mean)
        self.target_std = float(target_std)
        self.step = int(step)
        self.loss_history = loss_history or []

    @property
    def lags(self) -> tuple[int, int, int, int]:
        s = self.config.season_length
        return (1, 2, s, 2 * s)

    def _lag_features(self, values: np.ndarray) -> np.ndarray:
        # lag L counts back from the first forecast step t+1: value[t + 1 - L]
        return np.array([values[len(values) - lag] for lag in self.lags])

    def predict(self, win: InputWindow) -> IntervalForecast:
        self._check_window(win)
        if len(win) < 2 * self.config.season_length:
            raise ForecastError("window shorter than the largest lag")
        lagf = (self._lag_features(win.values) - self.feature_mean[:4]) / self.feature_std[:4]
        raw = np.empty((self.config.horizon, len(self.config.quantiles)))
        for i in range(1, self.config.horizon + 1):
            ts = win.end_timestamp + i * self.step
            tf = (time_features(ts) - self.feature_mean[4:8]) / self.feature_std[4:8]
            x = np.concatenate([lagf, tf, [1.0]])
            raw[i - 1] = self.weights[i - 1] @ x
        raw = raw * self.target_std + self.target_mean
        return IntervalForecast.from_raw(raw)

    def to_dict(self) -> dict:
        return {
            "version": FORECAST_FORMAT_VERSION,
            "kind": self.kind,
            "config": self.config.to_dict(),
            "step": self.step,
            "weights": self.weights.tolist(),
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
        }

    @staticmethod
    def from_dict(d: dict) -> "LinearQuantileForecaster":
        return LinearQuantileForecaster(
            ForecasterConfig.from_dict(d["config"]),
            np.array(d["weights"], dtype=np.float64),
            np.array(d["feature_mean"], dtype=np.float64),
            np.array(d["feature_std"], dtype=np.float64),
            d["target_mean"],
            d["target_std"],
            d["step"],
        )


def _training_tensors(trace: WorkloadTrace, config: ForecasterConfig):
    """Build (lag features, per-step calendar features, targets) for all origins."""
    season = config.season_length
    lags = (1, 2, season, 2 * season)
    min_history = max(config.input_length, 2 * season)
    first = min_history - 1
    last = len(trace) - config.horizon - 1
    if last < first:
        raise ForecastError(
            f"trace too short for training: need > {min_history + config.horizon} points"
        )
    origins = np.arange(first, last + 1)
    n = len(origins)
    base = np.empty((n, 4))
    for col, lag in enumerate(lags):
        base[:, col] = trace.values[origins + 1 - lag]
    tf = np.empty((n, config.horizon, 4))
    feats_by_index: dict[int, np.ndarray] = {}
    for row, t in enumerate(origins):
        for i in range(1, config.horizon + 1):
            idx = t + i
            if idx not in feats_by_index:
                feats_by_index[idx] = time_features(trace.timestamps[idx])
            tf[row, i - 1] = feats_by_index[idx]
    targets = np.empty((n, config.horizon))
    for i in range(1, config.horizon + 1):
        targets[:, i - 1] = trace.values[origins + i]
    return base, tf, targets


def fit_linear_quantile(
    trace: WorkloadTrace, config: ForecasterConfig
) -> LinearQuantileForecaster:
    """Train by full-batch subgradient descent on pinball loss.

    Deterministic: no shuffling, learning rate decays as 1/sqrt(epoch).
    Stops at the epoch budget or when the average epoch loss plateaus;
    aborts with diagnostics if loss exceeds 10x its initial value.
    """
    if len(trace) < 3 * config.season_length:
        raise ForecastError(
            f"need at least {3 * config.season_length} points, got {len(trace)}"
        )
    if config.input_length < 2 * config.season_length:
        raise ForecastError(
            "input_length must cover the largest lag (2 * season_length)"
        )
    base, tf, targets = _training_tensors(trace, config)
    n = base.shape[0]
    qs = np.array(config.quantiles)

    f_mean = np.concatenate([base.mean(axis=0), tf.reshape(-1, 4).mean(axis=0)])
    f_std = np.concatenate([base.std(axis=0), tf.reshape(-1, 4).std(axis=0)])
    f_std = np.where(f_std < 1e-12, 1.0, f_std)
    t_mean = float(targets.mean())
    t_std = float(targets.std())
    if t_std < 1e-12:
        t_std = 1.0
    base_s = (base - f_mean[:4]) / f_std[:4]
    tf_s = (tf - f_mean[4:8]) / f_std[4:8]
    y_s = (targets - t_mean) / t_std

    n_feat = 9  # 4 lags + 4 calendar + intercept
    weights = np.zeros((config.horizon, len(qs), n_feat))
    loss_history: list[float] = []
    best = np.inf
    stale = 0
    initial_loss = None
    for epoch in range(config.max_epochs):
        # pred[s, i, q] for origin s, step i, quantile q
        pred = (
            np.einsum("sf,iqf->siq", base_s, weights[:, :, :4])
            + np.einsum("sif,iqf->siq", tf_s, weights[:, :, 4:8])
            + weights[:, :, 8][None, :, :]
        )
        err = y_s[:, :, None] - pred
        loss = float(
            np.mean(np.where(err > 0, qs[None, None, :] * err, (qs[None, None, :] - 1) * err))
        )
        loss_history.append(loss)
        if initial_loss is None:
            initial_loss = max(loss, 1e-12)
        if loss > 10.0 * initial_loss:
            raise TrainingDiverged(
                f"loss {loss:.4g} exceeded 10x initial {initial_loss:.4g} "
                f"at epoch {epoch}",
                loss_history,
            )
        if loss < best - config.plateau_tol:
            best = loss
            stale = 0
        else:
            stale += 1
            if stale >= config.plateau_patience:
                break
        # pinball subgradient wrt prediction: -q above, (1-q) below
        g = np.where(err > 0, -qs[None, None, :], np.where(err < 0, 1 - qs[None, None, :], 0.0))
        lr = config.learning_rate / np.sqrt(1.0 + epoch)
        weights[:, :, :4] -= lr * np.einsum("siq,sf->iqf", g, base_s) / n
        weights[:, :, 4:8] -= lr * np.einsum("siq,sif->iqf", g, tf_s) / n
        weights[:, :, 8] -= lr * g.mean(axis=0)
    return LinearQuantileForecaster(
        config, weights, f_mean, f_std, t_mean, t_std, trace.step, loss_history
    )


_KINDS = {
    "seasonal": SeasonalQuantileForecaster,
    "linear": LinearQuantileForecaster,
}


def save_forecaster(forecaster: Forecaster, path: str | Path) -> None:
    Path(path).write_text(json.dumps(forecaster.to_dict(), indent=1), encoding="utf-8")


def load_forecaster(path: str | Path) -> Forecaster:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = d.get("kind")
    if kind not in _KINDS:
        raise ForecastError(f"unknown forecaster kind {kind!r}")
    if d.get("version") != FORECAST_FORMAT_VERSION:
        raise ForecastError(f"unsupported forecaster format version {d.get('version')}")
    return _KINDS[kind].from_dict(d)
