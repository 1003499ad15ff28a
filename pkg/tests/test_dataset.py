from datetime import datetime

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

import oracles
from netload.dataset import (CSV_COLUMNS, DIRECT_FEATURES, DataError, HourlyRecord,
                             Normalizer, build_dataset, compute_net_load, dataset_stats,
                             find_gaps, fit_normalizer, frame_to_records, ingest_csv,
                             make_windows, records_to_frame, shift_timezone, split_chronological,
                             split_counts, write_csv)
from netload.synthgen import SynthConfig, generate_components

HEADER = ",".join(CSV_COLUMNS)


def row(ts, load=40000, wind=9000, wcap=30000, solar=0, scap=9000, temp=20, ws=8, irr=0):
    return f"{ts},{load},{wind},{wcap},{solar},{scap},{temp},{ws},{irr}"


def write(tmp_path, lines, name="d.csv"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


class TestIngest:
    def test_three_rows_sorted(self, tmp_path):
        p = write(tmp_path, [HEADER, row("2021-01-01T02:00"), row("2021-01-01T00:00"),
                             row("2021-01-01T01:00")])
        frame = ingest_csv(p)
        assert len(frame) == 3
        assert list(frame.index.hour) == [0, 1, 2]
        assert len(frame_to_records(frame)) == 3

    def test_gap_report(self, tmp_path):
        p = write(tmp_path, [HEADER] + [row(f"2021-03-01T{h:02d}:00") for h in (3, 4, 6, 7)])
        gaps = find_gaps(ingest_csv(p))
        assert gaps == [pd.Timestamp("2021-03-01T05:00")]

    def test_negative_solar_names_line_and_field(self, tmp_path):
        p = write(tmp_path, [HEADER, row("2021-01-01T00:00"), row("2021-01-01T01:00", solar=-3)])
        with pytest.raises(DataError, match=r"line 3.*solar_gen"):
            ingest_csv(p)

    def test_malformed_number(self, tmp_path):
        p = write(tmp_path, [HEADER, row("2021-01-01T00:00").replace("9000", "x", 1)])
        with pytest.raises(DataError, match=r"line 2.*wind_gen_mw"):
            ingest_csv(p)

    def test_wrong_field_count(self, tmp_path):
        p = write(tmp_path, [HEADER, "2021-01-01T00:00,1,2"])
        with pytest.raises(DataError, match="line 2"):
            ingest_csv(p)

    def test_duplicate_timestamp(self, tmp_path):
        p = write(tmp_path, [HEADER, row("2021-01-01T00:00"), row("2021-01-01T01:00"),
                             row("2021-01-01T00:00")])
        with pytest.raises(DataError, match=r"line 4.*duplicate.*line 2"):
            ingest_csv(p)

    def test_bad_header(self, tmp_path):
        p = write(tmp_path, ["timestamp,load", "2021-01-01T00:00,1"])
        with pytest.raises(DataError, match="header"):
            ingest_csv(p)

    def test_generation_above_capacity(self, tmp_path):
        p = write(tmp_path, [HEADER, row("2021-01-01T00:00", wind=31000)])
        with pytest.raises(DataError, match="wind_gen exceeds"):
            ingest_csv(p)

    def test_off_hour_timestamp(self, tmp_path):
        p = write(tmp_path, [HEADER, row("2021-01-01T00:30")])
        with pytest.raises(DataError, match="on the hour"):
            ingest_csv(p)

    def test_csv_round_trip(self, tmp_path, small_frame):
        write_csv(small_frame, tmp_path / "x.csv")
        back = ingest_csv(tmp_path / "x.csv")
        assert list(back.index) == list(small_frame.index)
        np.testing.assert_allclose(back.to_numpy(), small_frame.to_numpy(), atol=5e-7)


class TestTimezone:
    def _frame(self, stamps):
        return records_to_frame([HourlyRecord(datetime.fromisoformat(s), 1, 0, 1, 0, 1, 0, 0, 0)
                                 for s in stamps])

    def test_gmt_to_cst(self):
        out = shift_timezone(self._frame(["2021-01-01T06:00"]))
        assert out.index[0] == pd.Timestamp("2021-01-01T00:00")

    def test_zero_offset_identity(self):
        f = self._frame(["2021-07-01T12:00", "2021-07-01T13:00"])
        assert list(shift_timezone(f, 0).index) == list(f.index)

    def test_inverse(self):
        f = self._frame(["2021-03-14T01:00", "2021-03-14T02:00", "2021-11-07T01:00"])
        assert list(shift_timezone(shift_timezone(f, -6), 6).index) == list(f.index)

    def test_no_daylight_saving(self):
        # a US DST transition hour shifts like any other hour
        f = self._frame(["2021-03-14T08:00", "2021-03-14T09:00"])
        out = shift_timezone(f)
        assert list(out.index.hour) == [2, 3]


class TestNetLoad:
    def _rec(self, load, wind, solar):
        return HourlyRecord(datetime(2021, 1, 1), load, wind, 40000, solar, 20000, 0, 0, 0)

    def test_definition(self):
        assert compute_net_load(self._rec(50000, 10000, 5000)) == 35000

    def test_no_renewables(self):
        assert compute_net_load(self._rec(42000.5, 0, 0)) == 42000.5

    def test_negative_is_flagged(self):
        r = self._rec(30000, 20000, 15000)
        assert compute_net_load(r) == -5000
        stats = dataset_stats(records_to_frame([r]))
        assert stats["negative_net_load_count"] == 1

    def test_recovers_generator_net_load(self):
        comp = generate_components(SynthConfig(n_years=1, seed=4))
        np.testing.assert_array_equal(compute_net_load(comp.frame()).to_numpy(), comp.net_load)

    def test_stats_report(self, small_frame):
        dropped = small_frame.drop(small_frame.index[[10, 11]])
        s = dataset_stats(dropped)
        assert s["rows"] == len(small_frame) - 2
        assert s["n_gaps"] == 2
        assert s["capacity_monotonicity_violations"] == {"wind_cap_mw": 0, "solar_cap_mw": 0}


class TestNormalizer:
    def test_min_max(self):
        n = fit_normalizer(np.array([[10.0], [20.0], [30.0]]), ["a"])
        assert n.mins[0] == 10 and n.maxs[0] == 30
        assert n.transform([[20.0]])[0, 0] == 0.5

    def test_unit_interval_identity(self):
        v = np.array([[0.0], [0.25], [1.0]])
        np.testing.assert_allclose(fit_normalizer(v, ["a"]).transform(v), v, atol=1e-15)

    def test_constant_feature_named(self):
        with pytest.raises(DataError, match="feature b"):
            fit_normalizer(np.array([[1.0, 5.0], [2.0, 5.0]]), ["a", "b"])

    def test_train_rows_only(self):
        v = np.array([[0.0], [1.0], [2.0], [100.0]])
        n = fit_normalizer(v, ["a"], slice(0, 3))
        assert n.maxs[0] == 2.0

    def test_empty_range(self):
        with pytest.raises(DataError):
            fit_normalizer(np.ones((3, 1)), ["a"], slice(0, 0))

    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=30)
           .filter(lambda xs: max(xs) - min(xs) > 1e-3 * max(1.0, max(map(abs, xs)))))
    def test_round_trip(self, xs):
        v = np.array(xs).reshape(-1, 1)
        n = fit_normalizer(v, ["a"])
        back = n.inverse(n.transform(v))
        np.testing.assert_allclose(back, v, rtol=1e-9, atol=1e-9 * np.abs(v).max())

    def test_dict_round_trip(self):
        n = fit_normalizer(np.array([[1.0, 4.0], [3.0, 9.0]]), ["a", "b"])
        m = Normalizer.from_dict(n.to_dict())
        assert m.columns == n.columns
        np.testing.assert_array_equal(m.mins, n.mins)


class TestWindows:
    def test_counts(self, small_frame):
        assert make_windows(small_frame.iloc[:30], 24, 1).n_samples == 6
        assert make_windows(small_frame.iloc[:30], 24, 2).n_samples == 5

    def test_insufficient(self, small_frame):
        with pytest.raises(DataError, match="insufficient"):
            make_windows(small_frame.iloc[:24], 24, 1)

    @given(st.integers(26, 200), st.integers(1, 24), st.integers(1, 4))
    def test_count_formula(self, small_frame, n, lb, la):
        if n < lb + la:
            with pytest.raises(DataError, match="insufficient"):
                make_windows(small_frame.iloc[:n], lb, la)
            return
        ds = make_windows(small_frame.iloc[:n], lb, la)
        assert ds.n_samples == oracles.window_count(n, lb, la)

    def test_target_alignment(self, small_frame):
        ds = build_dataset(small_frame, look_back=24, look_ahead=1)
        last_input = ds.timestamps[ds.starts + 23]
        target = ds.timestamps[ds.target_rows]
        assert np.all(target - last_input == np.timedelta64(1, "h"))
        # net load target column equals the derived feature at the target row
        k = ds.features.index("net_load_mw")
        np.testing.assert_array_equal(ds.raw[ds.target_rows, k], ds.target_raw[ds.target_rows])

    def test_gap_windows_dropped(self, small_frame):
        frame = small_frame.iloc[:60].drop(small_frame.index[40])
        ds = make_windows(frame, 24, 1)
        # 35 candidate positions; those starting at rows 16..34 straddle the hole
        assert ds.dropped_windows == 19
        assert ds.n_samples == 16
        hours = ds.timestamps
        spans = hours[ds.starts + 24] - hours[ds.starts]
        assert np.all(spans == np.timedelta64(24, "h"))

    def test_unknown_feature(self, small_frame):
        with pytest.raises(ValueError, match="unknown feature"):
            make_windows(small_frame, 24, 1, features=("nope",))

    def test_features_default_include_net_load_history(self):
        assert DIRECT_FEATURES[-1] == "net_load_mw" and len(DIRECT_FEATURES) == 9


class TestSplit:
    @pytest.mark.parametrize("n,expected", [(1000, (900, 50, 50)), (103, (93, 5, 5))])
    def test_counts(self, n, expected):
        assert split_counts(n) == expected

    @given(st.integers(1, 100000))
    def test_count_oracle(self, n):
        assert split_counts(n) == oracles.split_sizes(n)

    def test_empty_validation(self, small_frame):
        ds = make_windows(small_frame.iloc[:25], 24, 1)
        assert ds.n_samples == 1
        with pytest.raises(DataError, match="val split would be empty"):
            split_chronological(ds)

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            split_counts(10, (0.5, 0.2, 0.2))

    def test_chronological_and_leak_free(self, small_frame):
        ds = build_dataset(small_frame)
        tr, va, te = (ds.target_timestamps(s) for s in ("train", "val", "test"))
        assert tr.max() < va.min() and va.max() < te.min()
        for a, b in (("train", "val"), ("val", "test")):
            last_input = ds.starts[ds.split_slice(a)][-1] + ds.look_back - 1
            assert last_input < ds.target_rows[ds.split_slice(b)][0]

    def test_normalizer_fitted_on_train_rows_only(self, year_frame):
        # a later split extends the range, so a full-data fit would differ
        ds = build_dataset(year_frame)
        sl = ds.split_slice("train")
        last_train_row = ds.target_rows[sl][-1]
        k = ds.features.index("solar_cap_mw")
        assert ds.normalizer.maxs[k] == ds.raw[:last_train_row + 1, k].max()
        assert ds.normalizer.maxs[k] < ds.raw[:, k].max()
        x, _ = ds.arrays("train")
        assert x.min() >= 0.0 and x.max() <= 1.0
        assert ds.arrays("test")[0][..., k].max() > 1.0

    def test_arrays_shapes_and_denormalize(self, small_frame):
        ds = build_dataset(small_frame, look_back=12)
        x, y = ds.arrays("test")
        assert x.shape == (ds.split_slice("test").stop - ds.split_slice("test").start, 12, 9)
        np.testing.assert_allclose(ds.denormalize_target(y), ds.actual("test"), rtol=1e-12)

    def test_split_hash_stable_and_sensitive(self, small_frame):
        a = build_dataset(small_frame)
        b = build_dataset(small_frame, "wind_gen", ("wind_gen_mw", "wind_speed_ms"))
        c = build_dataset(small_frame, look_ahead=2)
        assert a.split_hash() == b.split_hash() != c.split_hash()
