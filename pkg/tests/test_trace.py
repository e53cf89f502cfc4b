import json
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burstscaler.trace import (
    DEFAULT_TEMPORAL_TYPES,
    PageviewsClient,
    TemporalType,
    TraceError,
    WorkloadTrace,
    build_pageviews_url,
    load_trace,
    save_trace,
    standardize,
    time_features,
    window,
)


def make_trace(values, step=3600, start=0):
    values = np.asarray(values, dtype=np.float64)
    ts = start + np.arange(len(values)) * step
    return WorkloadTrace(ts.astype(np.int64), values)


# --- load/save ----------------------------------------------------------------


def test_load_trace_basic(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("timestamp,value\n0,1\n3600,2\n7200,3\n")
    trace = load_trace(p)
    assert len(trace) == 3
    assert trace.step == 3600
    assert np.array_equal(trace.values, [1.0, 2.0, 3.0])


def test_load_trace_sorts_rows(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("timestamp,value\n7200,3\n0,1\n3600,2\n")
    trace = load_trace(p)
    assert list(trace.timestamps) == [0, 3600, 7200]
    assert list(trace.values) == [1.0, 2.0, 3.0]


def test_load_trace_duplicate_timestamp_names_row(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("timestamp,value\n0,1\n3600,2\n3600,3\n")
    with pytest.raises(TraceError, match="duplicate timestamp 3600 at row 2"):
        load_trace(p)


def test_load_trace_irregular_spacing_names_row(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("timestamp,value\n0,1\n3600,2\n7200,3\n9000,4\n")
    with pytest.raises(TraceError, match="irregular spacing at row 3"):
        load_trace(p)


def test_load_trace_non_numeric(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("timestamp,value\n0,1\n3600,oops\n")
    with pytest.raises(TraceError, match="row 2"):
        load_trace(p)


def test_load_trace_missing_file(tmp_path):
    with pytest.raises(TraceError, match="cannot read"):
        load_trace(tmp_path / "absent.csv")


def test_negative_value_rejected():
    with pytest.raises(TraceError, match="negative value"):
        make_trace([1.0, -2.0, 3.0])


@given(
    st.lists(
        st.floats(min_value=0, max_value=1e6, allow_nan=False, width=64),
        min_size=1,
        max_size=50,
    )
)
@settings(max_examples=50, deadline=None)
def test_save_load_round_trip_bit_exact(values):
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        trace = make_trace(values)
        path = Path(d) / "rt.csv"
        save_trace(trace, path)
        back = load_trace(path)
        assert np.array_equal(back.values, trace.values)
        assert np.array_equal(back.timestamps, trace.timestamps)


# --- standardize ---------------------------------------------------------------


def test_standardize_hand_computed():
    # sample std of [1,2,3] is 1, so the map is 500 + 175 * (v - 2)
    result = standardize(make_trace([1.0, 2.0, 3.0]))
    assert np.allclose(result.trace.values, [325.0, 500.0, 675.0], atol=1e-12)
    assert result.clamped == 0


def test_standardize_moments():
    rng = np.random.default_rng(0)
    trace = make_trace(rng.uniform(10, 90, size=500))
    out = standardize(trace).trace
    assert abs(np.mean(out.values) - 500.0) < 1e-9
    assert abs(np.std(out.values, ddof=1) - 175.0) < 1e-9
    # rank order preserved
    assert np.array_equal(np.argsort(out.values), np.argsort(trace.values))


def test_standardize_idempotent():
    rng = np.random.default_rng(1)
    trace = make_trace(rng.uniform(100, 900, size=300))
    once = standardize(trace).trace
    twice = standardize(once).trace
    assert np.allclose(twice.values, once.values, atol=1e-9)


def test_standardize_constant_trace_rejected():
    with pytest.raises(TraceError, match="zero variance"):
        standardize(make_trace([5.0, 5.0, 5.0]))


def test_standardize_clamps_and_reports():
    # one far-low outlier lands more than 500/175 sample deviations under the
    # mean, so its image is negative and gets clamped
    values = [1000.0] * 20 + [0.0]
    trace = make_trace(values)
    z_low = (0.0 - np.mean(values)) / np.std(values, ddof=1)
    assert 500.0 + 175.0 * z_low < 0.0
    result = standardize(trace)
    assert result.clamped == 1
    assert np.min(result.trace.values) == 0.0


@given(st.integers(min_value=2, max_value=60), st.integers(min_value=0, max_value=2**31))
@settings(max_examples=40, deadline=None)
def test_standardize_idempotence_property(n, seed):
    rng = np.random.default_rng(seed)
    values = rng.uniform(1.0, 100.0, size=n)
    if np.std(values, ddof=1) < 1e-6:
        return
    once = standardize(make_trace(values))
    if once.clamped:  # idempotence only holds for clamp-free traces
        return
    twice = standardize(once.trace)
    assert np.allclose(twice.trace.values, once.trace.values, atol=1e-9)


# --- time features --------------------------------------------------------------


def utc_ts(*args):
    return int(datetime(*args, tzinfo=timezone.utc).timestamp())


def test_time_features_hour_five():
    ts = utc_ts(2021, 6, 9, 5, 0)
    feats = time_features(ts, (TemporalType.HOUR_OF_DAY,))
    assert feats[0] == pytest.approx(5 / 23 - 0.5, abs=1e-6)
    assert feats[0] == pytest.approx(-0.282609, abs=1e-6)


def test_time_features_endpoints():
    midnight = utc_ts(2021, 6, 9, 0, 0)
    last_hour = utc_ts(2021, 6, 9, 23, 0)
    assert time_features(midnight, (TemporalType.HOUR_OF_DAY,))[0] == -0.5
    assert time_features(last_hour, (TemporalType.HOUR_OF_DAY,))[0] == 0.5


def test_time_features_monday():
    # calendar oracle: 2021-01-04 is a Monday
    ts = utc_ts(2021, 1, 4, 12, 0)
    assert datetime(2021, 1, 4, tzinfo=timezone.utc).weekday() == 0
    assert time_features(ts, (TemporalType.DAY_OF_WEEK,))[0] == -0.5


def test_time_features_all_types_in_range():
    ts = utc_ts(2023, 12, 31, 23, 0)
    feats = time_features(ts)
    assert feats.shape == (4,)
    assert np.all(feats >= -0.5) and np.all(feats <= 0.5)


@given(st.integers(min_value=0, max_value=2_000_000_000))
@settings(max_examples=100, deadline=None)
def test_time_features_periodicity(ts):
    day = 24 * 3600
    hour_now = time_features(ts, (TemporalType.HOUR_OF_DAY,))
    hour_next = time_features(ts + day, (TemporalType.HOUR_OF_DAY,))
    assert hour_now[0] == hour_next[0]
    dow_now = time_features(ts, (TemporalType.DAY_OF_WEEK,))
    dow_next = time_features(ts + 7 * day, (TemporalType.DAY_OF_WEEK,))
    assert dow_now[0] == dow_next[0]


def test_time_features_empty_types_rejected():
    with pytest.raises(ValueError):
        time_features(0, ())


# --- window ---------------------------------------------------------------------


def test_window_slice():
    trace = make_trace(np.arange(1.0, 11.0))
    win = window(trace, t=9, length=3)
    assert list(win.values) == [8.0, 9.0, 10.0]
    assert win.end_timestamp == trace.timestamps[9]


def test_window_full_prefix():
    trace = make_trace(np.arange(1.0, 11.0))
    win = window(trace, t=2, length=3)
    assert list(win.values) == [1.0, 2.0, 3.0]


def test_window_insufficient_history():
    trace = make_trace(np.arange(1.0, 11.0))
    with pytest.raises(TraceError, match="insufficient history"):
        window(trace, t=1, length=3)


def test_window_feature_matrix_shape():
    trace = make_trace(np.arange(1.0, 11.0))
    win = window(trace, t=9, length=4)
    assert win.feature_matrix().shape == (4, 4)


# --- pageviews fetch --------------------------------------------------------------


def test_pageviews_url_matches_api_template():
    # oracle: the documented REST path segments in order
    url = build_pageviews_url("Google", date(2018, 1, 1), date(2018, 1, 2))
    expected = (
        "https://wikimedia.org/api/rest_v1/metrics/pageviews/per-article/"
        "en.wikipedia/all-access/all-agents/Google/hourly/2018010100/2018010223"
    )
    assert url == expected


def test_pageviews_url_quotes_spaces():
    url = build_pageviews_url("Elon Musk", date(2020, 2, 1), date(2020, 2, 1))
    assert "/Elon_Musk/" in url


def test_fetch_pageviews_fixture_replay(tmp_path):
    items = [
        {"timestamp": f"20180101{h:02d}", "views": 100 + h} for h in range(24)
    ]
    client = PageviewsClient(fixture_dir=tmp_path, offline=True)
    fixture = client._fixture_path("Google", date(2018, 1, 1), date(2018, 1, 1))
    fixture.write_text(json.dumps({"items": items}))
    trace = client.fetch_pageviews("Google", date(2018, 1, 1), date(2018, 1, 1))
    assert len(trace) == 24
    assert trace.step == 3600
    assert trace.values[0] == 100.0 and trace.values[23] == 123.0


def test_fetch_pageviews_end_before_start(tmp_path):
    client = PageviewsClient(fixture_dir=tmp_path, offline=True)
    with pytest.raises(TraceError, match="before start"):
        client.fetch_pageviews("Google", date(2018, 1, 2), date(2018, 1, 1))


def test_fetch_pageviews_offline_without_fixture(tmp_path):
    client = PageviewsClient(fixture_dir=tmp_path, offline=True)
    with pytest.raises(TraceError, match="offline"):
        client.fetch_pageviews("Google", date(2018, 1, 1), date(2018, 1, 1))


class FlakySession:
    """Fails with server errors a fixed number of times, then succeeds."""

    def __init__(self, failures, payload):
        self.failures = failures
        self.payload = payload
        self.calls = 0

    def get(self, url, timeout=None):
        self.calls += 1

        class Resp:
            def __init__(self, code, payload):
                self.status_code = code
                self._payload = payload

            def json(self):
                return self._payload

        if self.calls <= self.failures:
            return Resp(503, None)
        return Resp(200, self.payload)


def test_fetch_retries_then_succeeds():
    payload = {"items": [{"timestamp": "2018010100", "views": 7}]}
    session = FlakySession(failures=2, payload=payload)
    client = PageviewsClient(session=session, max_retries=3, backoff=0.0)
    trace = client.fetch_pageviews("Google", date(2018, 1, 1), date(2018, 1, 1))
    assert session.calls == 3
    assert trace.values[0] == 7.0


def test_fetch_retries_exhausted():
    session = FlakySession(failures=10, payload=None)
    client = PageviewsClient(session=session, max_retries=3, backoff=0.0)
    with pytest.raises(TraceError, match="after 3 attempts"):
        client.fetch_pageviews("Google", date(2018, 1, 1), date(2018, 1, 1))
