import numpy as np
import pytest

from rlwindow.stream import (CsvSchema, DriftSpec, ReorderBuffer, StreamError,
                             StreamEvent, load_csv_stream, synth_stream, write_csv)


def ev(ts, values=(0.0,)):
    return StreamEvent(ts, np.array(values, dtype=float))


class TestStreamEvent:
    def test_rejects_non_finite_values(self):
        with pytest.raises(StreamError):
            StreamEvent(0, np.array([1.0, np.nan]))
        with pytest.raises(StreamError):
            StreamEvent(0, np.array([np.inf]))

    def test_rejects_negative_label(self):
        with pytest.raises(StreamError):
            StreamEvent(0, np.array([1.0]), label=-1)


class TestCsv:
    def test_three_rows_with_labels(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("t,x0,x1,label\n0,1.5,2.5,0\n1,3.0,4.0,1\n2,-1.0,0.25,0\n")
        schema = CsvSchema(value_columns=("x0", "x1"), timestamp="t", label="label")
        events = list(load_csv_stream(p, schema))
        assert len(events) == 3
        assert events[0].values.tolist() == [1.5, 2.5]
        assert [e.label for e in events] == [0, 1, 0]
        assert [e.timestamp for e in events] == [0, 1, 2]

    def test_header_only_is_empty(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("t,x0,x1,label\n")
        schema = CsvSchema(value_columns=("x0", "x1"), timestamp="t", label="label")
        assert list(load_csv_stream(p, schema)) == []

    def test_nan_cell_errors_with_row_number(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("t,x0\n0,1.0\n1,NaN\n")
        schema = CsvSchema(value_columns=("x0",), timestamp="t")
        with pytest.raises(StreamError, match="row 2"):
            list(load_csv_stream(p, schema))

    def test_non_numeric_cell_errors_with_row_number(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("x0\n1.0\nbogus\n")
        schema = CsvSchema(value_columns=("x0",))
        with pytest.raises(StreamError, match="row 2"):
            list(load_csv_stream(p, schema))

    def test_missing_file(self, tmp_path):
        schema = CsvSchema(value_columns=("x0",))
        with pytest.raises(FileNotFoundError):
            list(load_csv_stream(tmp_path / "nope.csv", schema))

    def test_short_row_is_dimension_mismatch(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("x0,x1\n1.0,2.0\n3.0\n")
        schema = CsvSchema(value_columns=("x0", "x1"))
        with pytest.raises(StreamError, match="row 2"):
            list(load_csv_stream(p, schema))

    def test_named_columns_need_header(self):
        with pytest.raises(StreamError):
            CsvSchema(value_columns=("x0",), has_header=False)

    def test_index_columns_without_header(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("1.0,7\n2.0,8\n")
        schema = CsvSchema(value_columns=(0,), label=None, has_header=False)
        events = list(load_csv_stream(p, schema))
        assert [e.timestamp for e in events] == [0, 1]
        assert [e.values[0] for e in events] == [1.0, 2.0]

    def test_export_round_trip(self, tmp_path):
        events = synth_stream(2, 50, 2, seed=3)
        p = tmp_path / "out.csv"
        schema = write_csv(events, p)
        back = list(load_csv_stream(p, schema))
        assert len(back) == 50
        for a, b in zip(events, back):
            assert a.timestamp == b.timestamp
            assert a.label == b.label
            np.testing.assert_array_equal(a.values, b.values)


class TestReorder:
    def test_horizon_zero_releases_immediately(self):
        buf = ReorderBuffer(0)
        for ts in range(5):
            out = buf.push(ev(ts))
            assert [e.timestamp for e in out] == [ts]

    def test_reorders_within_horizon(self):
        # hand simulation: 1,3,2 with horizon 2 -> release order 1,2,3
        buf = ReorderBuffer(2)
        order = []
        for ts in (1, 3, 2):
            order += [e.timestamp for e in buf.push(ev(ts))]
        order += [e.timestamp for e in buf.flush()]
        assert order == [1, 2, 3]
        assert buf.late_count == 0

    def test_drops_beyond_horizon(self):
        # hand simulation: 1,10,2 with horizon 2 -> 2 is late and dropped
        buf = ReorderBuffer(2)
        order = []
        for ts in (1, 10, 2):
            order += [e.timestamp for e in buf.push(ev(ts))]
        order += [e.timestamp for e in buf.flush()]
        assert order == [1, 10]
        assert buf.late_count == 1
        assert buf.total_count == 3
        assert buf.ooo_fraction == pytest.approx(1 / 3)

    def test_released_order_nondecreasing_property(self):
        # random shuffles displacing each event at most `horizon` positions
        rng = np.random.default_rng(7)
        for trial in range(50):
            horizon = int(rng.integers(1, 8))
            n = int(rng.integers(5, 60))
            order = np.arange(n) + rng.integers(-horizon, horizon + 1, size=n) * 0.001
            arrival = np.argsort(order, kind="stable")
            buf = ReorderBuffer(horizon)
            released = []
            for ts in arrival:
                released += [e.timestamp for e in buf.push(ev(int(ts)))]
            released += [e.timestamp for e in buf.flush()]
            assert released == sorted(released)
            assert len(released) + buf.late_count == n

    def test_no_event_held_longer_than_horizon(self):
        buf = ReorderBuffer(3)
        buf.push(ev(5))
        out = buf.push(ev(9))  # watermark 6 passes ts=5
        assert [e.timestamp for e in out] == [5]

    def test_negative_horizon_rejected(self):
        with pytest.raises(ValueError):
            ReorderBuffer(-1)


class TestDriftSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            DriftSpec(period=0)
        with pytest.raises(ValueError):
            DriftSpec(affected_dims=())
        with pytest.raises(ValueError):
            DriftSpec(scale_factor=0.0)
        with pytest.raises(ValueError):
            DriftSpec(affected_dims=(5,)).validate_for_dim(2)


class TestSynth:
    def test_deterministic_replay(self):
        a = synth_stream(3, 400, 2, seed=7)
        b = synth_stream(3, 400, 2, seed=7)
        assert len(a) == len(b) == 400
        for x, y in zip(a, b):
            assert x.timestamp == y.timestamp and x.label == y.label
            np.testing.assert_array_equal(x.values, y.values)

    def test_labels_in_range(self):
        for c in (2, 3, 5):
            events = synth_stream(2, 1200, c, seed=1)
            labels = {e.label for e in events}
            assert labels == set(range(c))

    def test_drift_shifts_affected_dim_mean(self):
        # sample-mean oracle: blocks [0,1000) and [1000,2000) share the same
        # class mix (period is a whole schedule cycle), so the difference
        # isolates one mean_delta step plus sampling noise
        drift = DriftSpec(period=1000, affected_dims=(0,), mean_delta=5.0, scale_factor=1.0)
        events = synth_stream(2, 2000, 2, drift=drift, seed=3)
        v = np.array([e.values for e in events])
        diff = v[1000:2000, 0].mean() - v[:1000, 0].mean()
        sigma = v[:, 0].std()
        assert abs(diff - 5.0) <= 3.0 * sigma / np.sqrt(1000)

    def test_no_drift_halves_within_noise(self):
        events = synth_stream(3, 10000, 2, seed=11)
        v = np.array([e.values for e in events])
        diff = np.abs(v[5000:].mean(axis=0) - v[:5000].mean(axis=0))
        tol = 3.0 * v.std(axis=0) * np.sqrt(2.0 / 5000.0)
        assert (diff <= tol).all()

    def test_drift_touches_only_affected_dims(self):
        drift = DriftSpec(period=500, affected_dims=(1,), mean_delta=4.0, scale_factor=1.5)
        plain = synth_stream(3, 1500, 2, drift=None, seed=9)
        shifted = synth_stream(3, 1500, 2, drift=drift, seed=9)
        vp = np.array([e.values for e in plain])
        vs = np.array([e.values for e in shifted])
        np.testing.assert_array_equal(vp[:, [0, 2]], vs[:, [0, 2]])
        assert not np.array_equal(vp[:, 1], vs[:, 1])
        assert [e.label for e in plain] == [e.label for e in shifted]

    def test_scale_factor_inflates_variance(self):
        drift = DriftSpec(period=1000, affected_dims=(0,), mean_delta=0.0, scale_factor=2.0)
        events = synth_stream(2, 2000, 2, drift=drift, seed=3)
        v = np.array([e.values for e in events])
        assert v[1000:, 0].var() > 2.5 * v[:1000, 0].var()

    def test_preconditions(self):
        with pytest.raises(ValueError):
            synth_stream(0, 10, 2)
        with pytest.raises(ValueError):
            synth_stream(1, 0, 2)
        with pytest.raises(ValueError):
            synth_stream(1, 10, 1)
