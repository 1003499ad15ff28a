"""Hourly grid data: CSV ingestion, net load, normalization, windowing and splits.

The in-memory table is a pandas DataFrame indexed by an hourly ``timestamp``
with the CSV schema's value columns. ``HourlyRecord`` is the row-level view.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, replace, field
from datetime import datetime
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

CSV_COLUMNS = ("timestamp", "total_load_mw", "wind_gen_mw", "wind_cap_mw", "solar_gen_mw",
               "solar_cap_mw", "temperature_c", "wind_speed_ms", "irradiance_wm2")
VALUE_COLUMNS = CSV_COLUMNS[1:]
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M"

# the eight measured inputs, in the order listed for the direct model
MEASURED_FEATURES = ("wind_speed_ms", "wind_gen_mw", "wind_cap_mw", "total_load_mw",
                  "irradiance_wm2", "solar_gen_mw", "solar_cap_mw", "temperature_c")
DIRECT_FEATURES = MEASURED_FEATURES + ("net_load_mw",)
DERIVED_COLUMNS = ("net_load_mw", "hour_sin", "hour_cos")

TARGETS = {
    "net_load": "net_load_mw",
    "total_load": "total_load_mw",
    "wind_gen": "wind_gen_mw",
    "solar_gen": "solar_gen_mw",
}

GMT_TO_CST = -6


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class HourlyRecord:
    timestamp: datetime
    total_load: float
    wind_gen: float
    wind_capacity: float
    solar_gen: float
    solar_capacity: float
    temperature: float
    wind_speed: float
    irradiance: float

    def violations(self) -> list[str]:
        """Names of fields breaking the record invariants, with reasons."""
        out = []
        for name in ("total_load", "wind_gen", "wind_capacity", "solar_gen", "solar_capacity",
                     "temperature", "wind_speed", "irradiance"):
            if not math.isfinite(getattr(self, name)):
                out.append(f"{name} is not finite")
        if out:
            return out
        if self.total_load <= 0:
            out.append("total_load must be positive")
        if self.wind_gen < 0:
            out.append("wind_gen is negative")
        if self.solar_gen < 0:
            out.append("solar_gen is negative")
        if self.wind_gen > self.wind_capacity:
            out.append("wind_gen exceeds wind_capacity")
        if self.solar_gen > self.solar_capacity:
            out.append("solar_gen exceeds solar_capacity")
        return out


_RECORD_FIELDS = ("total_load", "wind_gen", "wind_capacity", "solar_gen", "solar_capacity",
                  "temperature", "wind_speed", "irradiance")
_FIELD_TO_COLUMN = dict(zip(_RECORD_FIELDS, VALUE_COLUMNS))


def compute_net_load(r) -> float:
    """Net load = total load minus wind and solar generation.

    Works on an ``HourlyRecord`` or, vectorized, on a frame with the CSV columns.
    Negative results are allowed; ``dataset_stats`` counts them.
    """
    if isinstance(r, pd.DataFrame):
        return r["total_load_mw"] - r["wind_gen_mw"] - r["solar_gen_mw"]
    return r.total_load - r.wind_gen - r.solar_gen


def records_to_frame(records: Iterable[HourlyRecord]) -> pd.DataFrame:
    records = list(records)
    data = {col: [getattr(r, f) for r in records] for f, col in _FIELD_TO_COLUMN.items()}
    idx = pd.DatetimeIndex([r.timestamp for r in records], name="timestamp")
    return pd.DataFrame(data, index=idx, columns=list(VALUE_COLUMNS), dtype=np.float64)


def frame_to_records(frame: pd.DataFrame) -> list[HourlyRecord]:
    cols = [frame[c].to_numpy() for c in VALUE_COLUMNS]
    return [HourlyRecord(ts.to_pydatetime(), *(float(c[n]) for c in cols))
            for n, ts in enumerate(frame.index)]


def _parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text.strip())
    if ts.tzinfo is not None:
        raise ValueError("timestamps must be naive local hours")
    if ts.minute or ts.second or ts.microsecond:
        raise ValueError("timestamp is not on the hour")
    return ts


def ingest_csv(path) -> pd.DataFrame:
    """Read an hourly CSV in the documented schema.

    Rows are validated (finite values, positive load, generation within
    ``[0, capacity]``) and returned sorted by timestamp. Missing hours are
    allowed; see ``find_gaps``.

    Raises:
        DataError: on a wrong header, a malformed or invalid row (the message
            carries the line number and field), or a duplicate timestamp.
    """
    stamps: list[datetime] = []
    values: list[list[float]] = []
    seen: dict[datetime, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise DataError(f"{path}: header must be {','.join(CSV_COLUMNS)}, got {header}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_COLUMNS):
                raise DataError(f"line {line}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            try:
                ts = _parse_timestamp(row[0])
            except ValueError as exc:
                raise DataError(f"line {line}: bad timestamp {row[0]!r}: {exc}") from None
            nums = []
            for col, text in zip(VALUE_COLUMNS, row[1:]):
                try:
                    nums.append(float(text))
                except ValueError:
                    raise DataError(f"line {line}: field {col} is not a number: {text!r}") from None
            rec = HourlyRecord(ts, *nums)
            bad = rec.violations()
            if bad:
                raise DataError(f"line {line}: " + "; ".join(bad))
            if ts in seen:
                raise DataError(f"line {line}: duplicate timestamp {ts:{TIMESTAMP_FORMAT}} "
                                f"(first seen on line {seen[ts]})")
            seen[ts] = line
            stamps.append(ts)
            values.append(nums)
    frame = pd.DataFrame(np.array(values, dtype=np.float64).reshape(-1, len(VALUE_COLUMNS)),
                         index=pd.DatetimeIndex(stamps, name="timestamp"),
                         columns=list(VALUE_COLUMNS))
    return frame.sort_index(kind="stable")


def write_csv(frame: pd.DataFrame, path, float_format: str = "%.6f") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        cols = [frame[c].to_numpy() for c in VALUE_COLUMNS]
        stamps = frame.index.strftime(TIMESTAMP_FORMAT)
        for n, ts in enumerate(stamps):
            w.writerow([ts] + [float_format % c[n] for c in cols])


def find_gaps(frame: pd.DataFrame) -> list[pd.Timestamp]:
    """Every missing hour strictly between the first and last timestamps."""
    if len(frame) < 2:
        return []
    full = pd.date_range(frame.index[0], frame.index[-1], freq="h")
    return list(full.difference(frame.index))


def shift_timezone(frame: pd.DataFrame, offset_hours: int = GMT_TO_CST) -> pd.DataFrame:
    """Shift every timestamp by a fixed number of hours (no daylight saving)."""
    out = frame.copy()
    out.index = out.index + pd.Timedelta(hours=offset_hours)
    return out


def dataset_stats(frame: pd.DataFrame) -> dict:
    net = compute_net_load(frame)
    gaps = find_gaps(frame)
    return {
        "rows": int(len(frame)),
        "start": frame.index[0].strftime(TIMESTAMP_FORMAT) if len(frame) else None,
        "end": frame.index[-1].strftime(TIMESTAMP_FORMAT) if len(frame) else None,
        "n_gaps": len(gaps),
        "gaps": [g.strftime(TIMESTAMP_FORMAT) for g in gaps],
        "negative_net_load_count": int((net < 0).sum()),
        "capacity_monotonicity_violations": {
            c: int((np.diff(frame[c].to_numpy()) < 0).sum()) for c in ("wind_cap_mw", "solar_cap_mw")
        },
    }


def add_derived(frame: pd.DataFrame) -> pd.DataFrame:
    """Frame with ``net_load_mw`` and hour-of-day encodings appended."""
    out = frame.copy()
    out["net_load_mw"] = compute_net_load(frame)
    hour = frame.index.hour.to_numpy()
    out["hour_sin"] = np.sin(2 * np.pi * hour / 24)
    out["hour_cos"] = np.cos(2 * np.pi * hour / 24)
    return out


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class Normalizer:
    columns: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def _idx(self, columns):
        try:
            return [self.columns.index(c) for c in columns]
        except ValueError as exc:
            raise KeyError(f"normalizer has no column: {exc}") from None

    def transform(self, values, columns: Sequence[str] | None = None) -> np.ndarray:
        idx = self._idx(columns) if columns is not None else slice(None)
        lo, hi = self.mins[idx], self.maxs[idx]
        return (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)

    def inverse(self, values, columns: Sequence[str] | None = None) -> np.ndarray:
        idx = self._idx(columns) if columns is not None else slice(None)
        lo, hi = self.mins[idx], self.maxs[idx]
        return np.asarray(values, dtype=np.float64) * (hi - lo) + lo

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "mins": self.mins.tolist(),
                "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(tuple(d["columns"]), np.array(d["mins"], dtype=np.float64),
                   np.array(d["maxs"], dtype=np.float64))


def fit_normalizer(values, columns: Sequence[str], train_rows: slice | None = None) -> Normalizer:
    """Per-column min/max over the training rows only.

    ``values`` is a 2-D array (rows x columns) or a frame holding ``columns``.
    """
    if isinstance(values, pd.DataFrame):
        values = values[list(columns)].to_numpy(dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    rows = values[train_rows if train_rows is not None else slice(None)]
    if len(rows) == 0:
        raise DataError("cannot fit a normalizer on an empty training range")
    lo = rows.min(axis=0)
    hi = rows.max(axis=0)
    for c, a, b in zip(columns, lo, hi):
        if not b > a:
            raise DataError(f"feature {c} is constant over the training rows; cannot min-max scale")
    return Normalizer(tuple(columns), lo, hi)


# ---------------------------------------------------------------------------
# windows


SPLITS = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    """Sliding windows over an hourly table.

    Sample ``k`` uses feature rows ``starts[k] .. starts[k] + look_back - 1``
    and the target row ``starts[k] + look_back + look_ahead - 1``. Raw values
    are kept; ``arrays`` returns normalized copies once a split is frozen.
    """
    timestamps: np.ndarray          # datetime64[h], one per table row
    features: tuple[str, ...]
    raw: np.ndarray                 # (rows, features)
    target: str
    target_raw: np.ndarray          # (rows,)
    look_back: int
    look_ahead: int
    starts: np.ndarray              # row index of each window start
    dropped_windows: int = 0
    bounds: tuple[int, int, int] | None = None
    normalizer: Normalizer | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def target_column(self) -> str:
        return TARGETS[self.target]

    @property
    def n_samples(self) -> int:
        return len(self.starts)

    @property
    def target_rows(self) -> np.ndarray:
        return self.starts + self.look_back + self.look_ahead - 1

    def split_slice(self, split: str) -> slice:
        if self.bounds is None:
            raise DataError("dataset has not been split")
        n_train, n_val, n_test = self.bounds
        return {"train": slice(0, n_train), "val": slice(n_train, n_train + n_val),
                "test": slice(n_train + n_val, n_train + n_val + n_test)}[split]

    def arrays(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        """Normalized ``(X, y)``: X is (n, look_back, features), y is (n, 1)."""
        if split not in self._cache:
            if self.normalizer is None:
                raise DataError("dataset has no fitted normalizer")
            starts = self.starts[self.split_slice(split)]
            feats = self.normalizer.transform(self.raw, self.features)
            x = feats[starts[:, None] + np.arange(self.look_back)]
            y = self.normalizer.transform(self.target_raw[starts + self.look_back
                                                          + self.look_ahead - 1],
                                          [self.target_column])
            self._cache[split] = (np.ascontiguousarray(x), y.reshape(-1, 1))
        return self._cache[split]

    def actual(self, split: str) -> np.ndarray:
        """Raw target values (physical units) for a split."""
        return self.target_raw[self.target_rows[self.split_slice(split)]]

    def target_timestamps(self, split: str) -> np.ndarray:
        return self.timestamps[self.target_rows[self.split_slice(split)]]

    def denormalize_target(self, y) -> np.ndarray:
        return self.normalizer.inverse(np.asarray(y).reshape(-1), [self.target_column])

    def split_hash(self) -> str:
        """Digest of the window starts, horizon and split boundaries."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.starts, dtype="<i8").tobytes())
        h.update(np.array([self.look_back, self.look_ahead, *(self.bounds or (0, 0, 0))],
                          dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.timestamps.astype("datetime64[h]").astype("<i8"))
                 .tobytes())
        return h.hexdigest()


def make_windows(frame: pd.DataFrame, look_back: int = 24, look_ahead: int = 1,
                 target: str = "net_load", features: Sequence[str] = DIRECT_FEATURES
                 ) -> WindowedDataset:
    """Cut every gap-free window from ``frame``.

    Windows whose span (inputs through target hour) crosses a missing hour are
    dropped and counted in ``dropped_windows``.
    """
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}; choose from {sorted(TARGETS)}")
    if look_back < 1 or look_ahead < 1:
        raise ValueError("look_back and look_ahead must be positive")
    table = add_derived(frame)
    missing = [c for c in features if c not in table.columns]
    if missing:
        raise ValueError(f"unknown feature columns {missing}")
    span = look_back + look_ahead
    n_rows = len(table)
    if n_rows < span:
        raise DataError(f"insufficient data: {n_rows} rows cannot fill one window of "
                        f"look_back {look_back} + look_ahead {look_ahead}")
    hours = table.index.values.astype("datetime64[h]")
    offsets = (hours - hours[0]).astype(np.int64)
    candidates = np.arange(n_rows - span + 1)
    contiguous = offsets[candidates + span - 1] - offsets[candidates] == span - 1
    starts = candidates[contiguous]
    if len(starts) == 0:
        raise DataError("insufficient data: no gap-free window")
    return WindowedDataset(
        timestamps=hours,
        features=tuple(features),
        raw=table[list(features)].to_numpy(dtype=np.float64),
        target=target,
        target_raw=table[TARGETS[target]].to_numpy(dtype=np.float64),
        look_back=look_back,
        look_ahead=look_ahead,
        starts=starts,
        dropped_windows=int((~contiguous).sum()),
    )


def split_counts(n: int, ratios=(0.9, 0.05, 0.05)) -> tuple[int, int, int]:
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n_val = math.floor(ratios[1] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    return n - n_val - n_test, n_val, n_test


def split_chronological(ds: WindowedDataset, ratios=(0.9, 0.05, 0.05)) -> WindowedDataset:
    """Freeze contiguous train/val/test ranges and fit the normalizer on train rows.

    The normalizer sees every table row from the first training window start
    through the last training target hour, and nothing later.
    """
    counts = split_counts(ds.n_samples, ratios)
    for name, c in zip(SPLITS, counts):
        if c == 0:
            raise DataError(f"{name} split would be empty ({ds.n_samples} samples, ratios {ratios})")
    out = replace(ds, bounds=counts, _cache={})
    # no split's inputs may reach a later split's target hour
    for a, b in zip(SPLITS, SPLITS[1:]):
        last_input = out.starts[out.split_slice(a)][-1] + ds.look_back - 1
        first_target = out.target_rows[out.split_slice(b)][0]
        if last_input >= first_target:
            raise DataError(f"{a} inputs overlap {b} targets")
    train = out.split_slice("train")
    rows = slice(int(out.starts[train][0]), int(out.target_rows[train][-1]) + 1)
    columns = list(ds.features)
    values = ds.raw
    if ds.target_column not in columns:
        columns.append(ds.target_column)
        values = np.column_stack([ds.raw, ds.target_raw])
    norm = fit_normalizer(values, columns, rows)
    return replace(out, normalizer=norm)


def build_dataset(frame: pd.DataFrame, target: str = "net_load",
                  features: Sequence[str] = DIRECT_FEATURES, look_back: int = 24,
                  look_ahead: int = 1, ratios=(0.9, 0.05, 0.05)) -> WindowedDataset:
    return split_chronological(make_windows(frame, look_back, look_ahead, target, features), ratios)
