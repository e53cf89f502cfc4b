"""Workload trace ingestion, standardization, windowing, and calendar features."""

from __future__ import annotations

import csv
import enum
import json
import logging
import time
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

HOUR_SECONDS = 3600


class TraceError(ValueError):
    """Raised when a trace file or series violates the trace contract."""


class TemporalType(str, enum.Enum):
    """Calendar feature types, each with a value range [0, period)."""

    HOUR_OF_DAY = "hour_of_day"
    DAY_OF_WEEK = "day_of_week"
    DAY_OF_MONTH = "day_of_month"
    MONTH_OF_YEAR = "month_of_year"

    @property
    def period(self) -> int:
        return _PERIODS[self]

    def value_of(self, dt: datetime) -> int:
        if self is TemporalType.HOUR_OF_DAY:
            return dt.hour
        if self is TemporalType.DAY_OF_WEEK:
            return dt.weekday()  # Monday == 0
        if self is TemporalType.DAY_OF_MONTH:
            return dt.day - 1
        return dt.month - 1


_PERIODS = {
    TemporalType.HOUR_OF_DAY: 24,
    TemporalType.DAY_OF_WEEK: 7,
    TemporalType.DAY_OF_MONTH: 31,
    TemporalType.MONTH_OF_YEAR: 12,
}

DEFAULT_TEMPORAL_TYPES: tuple[TemporalType, ...] = (
    TemporalType.HOUR_OF_DAY,
    TemporalType.DAY_OF_WEEK,
    TemporalType.DAY_OF_MONTH,
    TemporalType.MONTH_OF_YEAR,
)


@dataclass(frozen=True)
class WorkloadTrace:
    """Equally spaced, strictly increasing request-rate series.

    timestamps are epoch seconds (int64); values are non-negative requests
    per time step. The spacing between consecutive timestamps is constant.
    """

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if ts.ndim != 1 or vals.ndim != 1:
            raise TraceError("timestamps and values must be 1-D")
        if len(ts) != len(vals):
            raise TraceError(
                f"length mismatch: {len(ts)} timestamps vs {len(vals)} values"
            )
        if len(ts) == 0:
            raise TraceError("empty trace")
        if not np.all(np.isfinite(vals)):
            bad = int(np.argmax(~np.isfinite(vals)))
            raise TraceError(f"non-finite value at row {bad}")
        if np.any(vals < 0):
            bad = int(np.argmax(vals < 0))
            raise TraceError(f"negative value {vals[bad]} at row {bad}")
        if len(ts) >= 2:
            deltas = np.diff(ts)
            if np.any(deltas == 0):
                bad = int(np.argmax(deltas == 0)) + 1
                raise TraceError(f"duplicate timestamp {ts[bad]} at row {bad}")
            if np.any(deltas < 0):
                bad = int(np.argmax(deltas < 0)) + 1
                raise TraceError(f"timestamps not increasing at row {bad}")
            if np.any(deltas != deltas[0]):
                bad = int(np.argmax(deltas != deltas[0])) + 1
                raise TraceError(
                    f"irregular spacing at row {bad}: expected step {deltas[0]}, "
                    f"got {deltas[bad - 1]}"
                )
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def step(self) -> int:
        """Inter-sample spacing in seconds (1 hour for single-row traces)."""
        if len(self.timestamps) < 2:
            return HOUR_SECONDS
        return int(self.timestamps[1] - self.timestamps[0])

    def with_values(self, values: np.ndarray) -> "WorkloadTrace":
        return WorkloadTrace(self.timestamps.copy(), np.asarray(values, dtype=np.float64))

    def slice(self, start: int, stop: int) -> "WorkloadTrace":
        return WorkloadTrace(self.timestamps[start:stop], self.values[start:stop])

    def summary(self) -> dict:
        return {
            "length": len(self),
            "step_seconds": self.step,
            "mean": float(np.mean(self.values)),
            "std": float(np.std(self.values, ddof=1)) if len(self) > 1 else 0.0,
            "min": float(np.min(self.values)),
            "max": float(np.max(self.values)),
        }


@dataclass(frozen=True)
class InputWindow:
    """Fixed-length forecaster input: the most recent values with timestamps."""

    values: np.ndarray
    timestamps: np.ndarray
    step: int

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end_timestamp(self) -> int:
        return int(self.timestamps[-1])

    def feature_matrix(
        self, types: tuple[TemporalType, ...] = DEFAULT_TEMPORAL_TYPES
    ) -> np.ndarray:
        return time_feature_matrix(self.timestamps, types)


def load_trace(
    path: str | Path, columns: tuple[str, str] = ("timestamp", "value")
) -> WorkloadTrace:
    """Load and validate a trace from a CSV file with a header row.

    Rows are sorted by timestamp before validation; duplicates and irregular
    spacing are rejected with the offending row named (1-based data row,
    counted after sorting for spacing errors).
    """
    path = Path(path)
    ts_col, val_col = columns
    rows: list[tuple[int, float]] = []
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or ts_col not in reader.fieldnames:
                raise TraceError(f"missing column {ts_col!r} in {path}")
            if val_col not in reader.fieldnames:
                raise TraceError(f"missing column {val_col!r} in {path}")
            for i, row in enumerate(reader, start=1):
                try:
                    ts = int(float(row[ts_col]))
                    val = float(row[val_col])
                except (TypeError, ValueError) as exc:
                    raise TraceError(f"non-numeric entry at row {i}: {row}") from exc
                rows.append((ts, val))
    except OSError as exc:
        raise TraceError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise TraceError(f"no data rows in {path}")
    rows.sort(key=lambda r: r[0])
    return WorkloadTrace(
        np.array([r[0] for r in rows], dtype=np.int64),
        np.array([r[1] for r in rows], dtype=np.float64),
    )


def save_trace(trace: WorkloadTrace, path: str | Path) -> None:
    """Write `timestamp,value` CSV; float repr round-trips bit-exactly."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value"])
        for ts, val in zip(trace.timestamps, trace.values):
            writer.writerow([int(ts), repr(float(val))])


@dataclass(frozen=True)
class StandardizeResult:
    trace: WorkloadTrace
    clamped: int


def standardize(
    trace: WorkloadTrace, target_mean: float = 500.0, target_std: float = 175.0
) -> StandardizeResult:
    """Z-score the trace, then shift to target mean/std (sample std, ddof=1).

    Values mapped below zero are clamped to 0 and counted; a heavy clamp
    count means the trace is too skewed for this transform.
    """
    if len(trace) < 2:
        raise TraceError("standardize needs at least 2 points")
    std = float(np.std(trace.values, ddof=1))
    if std == 0.0:
        raise TraceError("zero variance: constant trace cannot be standardized")
    z = (trace.values - np.mean(trace.values)) / std
    mapped = target_mean + target_std * z
    clamped = int(np.sum(mapped < 0))
    if clamped:
        logger.warning("standardize clamped %d negative values to 0", clamped)
        mapped = np.maximum(mapped, 0.0)
    return StandardizeResult(trace.with_values(mapped), clamped)


def time_features(
    timestamp: int | float,
    types: tuple[TemporalType, ...] = DEFAULT_TEMPORAL_TYPES,
) -> np.ndarray:
    """Encode a timestamp as one value per temporal type, each in [-0.5, 0.5].

    Each entry is h / (L - 1) - 0.5 where h is the value of the temporal
    type (e.g. hour 0..23) and L its period (e.g. 24). UTC calendar.
    """
    if not types:
        raise ValueError("at least one temporal type required")
    dt = datetime.fromtimestamp(int(timestamp), tz=timezone.utc)
    return np.array(
        [t.value_of(dt) / (t.period - 1) - 0.5 for t in types], dtype=np.float64
    )


def time_feature_matrix(
    timestamps: np.ndarray,
    types: tuple[TemporalType, ...] = DEFAULT_TEMPORAL_TYPES,
) -> np.ndarray:
    """time_features applied row-wise; shape (len(timestamps), len(types))."""
    return np.stack([time_features(ts, types) for ts in np.asarray(timestamps)])


def window(trace: WorkloadTrace, t: int, length: int) -> InputWindow:
    """The `length` most recent (value, timestamp) pairs ending at index t."""
    if length < 1:
        raise ValueError("window length must be >= 1")
    if t < length - 1:
        raise TraceError(
            f"insufficient history: need {length} points ending at index {t}"
        )
    if t >= len(trace):
        raise TraceError(f"index {t} out of range for trace of length {len(trace)}")
    lo = t - length + 1
    return InputWindow(
        values=trace.values[lo : t + 1].copy(),
        timestamps=trace.timestamps[lo : t + 1].copy(),
        step=trace.step,
    )


# --- Wikimedia pageviews fetcher -------------------------------------------

PAGEVIEWS_BASE = "https://wikimedia.org/api/rest_v1/metrics/pageviews/per-article"


def build_pageviews_url(
    article: str,
    start: date,
    end: date,
    project: str = "en.wikipedia",
    access: str = "all-access",
    agent: str = "all-agents",
    granularity: str = "hourly",
) -> str:
    """URL for the public per-article pageviews endpoint (hourly counts)."""
    quoted = article.replace(" ", "_")
    start_s = start.strftime("%Y%m%d") + "00"
    end_s = end.strftime("%Y%m%d") + "23"
    return (
        f"{PAGEVIEWS_BASE}/{project}/{access}/{agent}/{quoted}/"
        f"{granularity}/{start_s}/{end_s}"
    )


class PageviewsClient:
    """Fetches hourly pageview counts, with disk-cached raw JSON fixtures.

    When `fixture_dir` is set, responses are cached there as raw JSON and
    replayed on later calls; `offline=True` forbids network access entirely
    so tests and air-gapped runs replay fixtures deterministically.
    """

    def __init__(
        self,
        fixture_dir: str | Path | None = None,
        offline: bool = False,
        session=None,
        max_retries: int = 3,
        backoff: float = 0.5,
        project: str = "en.wikipedia",
    ):
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.offline = offline
        self._session = session
        self.max_retries = max_retries
        self.backoff = backoff
        self.project = project

    def _fixture_path(self, article: str, start: date, end: date) -> Path:
        assert self.fixture_dir is not None
        safe = article.replace(" ", "_").replace("/", "_")
        name = f"{self.project}_{safe}_{start.isoformat()}_{end.isoformat()}.json"
        return self.fixture_dir / name

    def _get(self, url: str) -> dict:
        if self._session is None:
            import requests

            self._session = requests.Session()
        last_exc: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = self._session.get(url, timeout=30)
                if resp.status_code >= 500:
                    raise TraceError(f"server error {resp.status_code} for {url}")
                if resp.status_code != 200:
                    raise TraceError(f"HTTP {resp.status_code} for {url}")
                return resp.json()
            except TraceError as exc:
                last_exc = exc
                if "server error" not in str(exc):
                    raise
            except Exception as exc:  # connection-level failures are retryable
                last_exc = exc
            if attempt < self.max_retries - 1:
                time.sleep(self.backoff * (2**attempt))
        raise TraceError(f"fetch failed after {self.max_retries} attempts: {last_exc}")

    def fetch_pageviews(self, article: str, start: date, end: date) -> WorkloadTrace:
        """Hourly pageview counts for `article` over [start, end] (UTC days)."""
        if end < start:
            raise TraceError(f"end {end} before start {start}")
        raw = None
        fixture = None
        if self.fixture_dir is not None:
            fixture = self._fixture_path(article, start, end)
            if fixture.exists():
                raw = json.loads(fixture.read_text(encoding="utf-8"))
        if raw is None:
            if self.offline:
                raise TraceError(
                    f"offline mode and no fixture for {article} {start}..{end}"
                )
            url = build_pageviews_url(article, start, end, project=self.project)
            raw = self._get(url)
            if fixture is not None:
                fixture.parent.mkdir(parents=True, exist_ok=True)
                fixture.write_text(json.dumps(raw), encoding="utf-8")
        items = raw.get("items", [])
        if not items:
            raise TraceError(f"empty result for {article} {start}..{end}")
        pairs = []
        for item in items:
            stamp = str(item["timestamp"])  # e.g. "2018010100"
            dt = datetime.strptime(stamp, "%Y%m%d%H").replace(tzinfo=timezone.utc)
            pairs.append((int(dt.timestamp()), float(item["views"])))
        pairs.sort(key=lambda p: p[0])
        return WorkloadTrace(
            np.array([p[0] for p in pairs], dtype=np.int64),
            np.array([p[1] for p in pairs], dtype=np.float64),
        )


def fetch_pageviews(
    article: str, start: date, end: date, **client_kwargs
) -> WorkloadTrace:
    """Convenience wrapper around PageviewsClient.fetch_pageviews."""
    return PageviewsClient(**client_kwargs).fetch_pageviews(article, start, end)
