"""Loading, hourly resampling, temporal splitting and standardization of load data.

Two raw layouts are understood:

* ``wide``: one timestamp column followed by one column per client.
* ``ausgrid``: the Ausgrid solar home layout, one row per (client, day,
  consumption category) with 48 half-hour columns. Only the general
  consumption category (``GC``) is kept.

Half-hour energies are summed into the hour in which each interval starts.
Everything downstream works on :class:`HourlyDataset`, whose canonical on-disk
form is a wide CSV with ISO-8601 hourly timestamps.
"""
from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    ConstantSeries,
    EmptyDataset,
    InconsistentResolution,
    MalformedRow,
    NoCommonTimeRange,
    TooShort,
)

HOUR = pd.Timedelta(hours=1)
TRAIN_FRACTION = 0.7
VAL_FRACTION = 0.1

AUSGRID_GENERAL_CONSUMPTION = "GC"
_HALF_HOUR_COLUMN = re.compile(r"^\s*\d{1,2}:\d{2}\s*$")


class SourceFormat(str, enum.Enum):
    WIDE = "wide"
    AUSGRID = "ausgrid"


class Region(str, enum.Enum):
    PORTUGAL = "Portugal"
    NEW_SOUTH_WALES = "NewSouthWales"
    CUSTOM = "Custom"


@dataclass
class RawDataset:
    """Long-format load records as read from disk.

    ``frame`` has columns ``timestamp``, ``client_id`` and ``load``. Clients
    that had unparsable or missing values are listed in ``report`` with a
    reason; their remaining records are kept so that resampling can decide.
    """

    frame: pd.DataFrame
    source_format: SourceFormat
    report: dict[str, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.frame)

    @property
    def client_ids(self):
        return sorted(self.frame["client_id"].unique())


@dataclass(frozen=True)
class HourlyDataset:
    values: np.ndarray
    timestamps: pd.DatetimeIndex
    client_ids: tuple
    region: Region = Region.CUSTOM
    dropped: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"values must be a T x C matrix, got shape {values.shape}")
        T, C = values.shape
        if C < 1 or T < 24:
            raise TooShort(f"need at least 24 hours and one client, got T={T}, C={C}")
        if len(self.client_ids) != C:
            raise ValueError(f"{len(self.client_ids)} client ids for {C} columns")
        if np.isnan(values).any():
            raise ValueError("hourly dataset must not contain missing values")
        ts = pd.DatetimeIndex(self.timestamps)
        if len(ts) != T:
            raise ValueError(f"{len(ts)} timestamps for {T} rows")
        if T > 1 and not (np.diff(ts.asi8) == HOUR.value).all():
            raise ValueError("timestamps must be a gap-free hourly index")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "client_ids", tuple(str(c) for c in self.client_ids))
        object.__setattr__(self, "region", Region(self.region))

    @property
    def n_hours(self):
        return self.values.shape[0]

    @property
    def n_clients(self):
        return self.values.shape[1]

    def with_values(self, values):
        return HourlyDataset(values, self.timestamps, self.client_ids, self.region, self.dropped)

    def select_clients(self, client_ids):
        idx = [self.client_ids.index(str(c)) for c in client_ids]
        return HourlyDataset(self.values[:, idx], self.timestamps,
                             [self.client_ids[i] for i in idx], self.region)

    def fingerprint(self):
        """SHA-256 over values, timestamps and client ids."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.values).tobytes())
        h.update(self.timestamps.asi8.tobytes())
        h.update("\x1f".join(self.client_ids).encode())
        return h.hexdigest()

    def to_frame(self):
        frame = pd.DataFrame(self.values, index=self.timestamps, columns=list(self.client_ids))
        frame.index.name = "timestamp"
        return frame

    def to_csv(self, path):
        # repr-precision floats keep the round trip exact
        self.to_frame().to_csv(path, date_format="%Y-%m-%dT%H:%M:%S", float_format="%.17g")

    @classmethod
    def from_csv(cls, path, region=Region.CUSTOM):
        raw = load_raw_csv(path, SourceFormat.WIDE)
        return resample_hourly(raw, region=region)


@dataclass(frozen=True)
class SplitDataset:
    """Contiguous train/val/test row ranges of one dataset.

    The same boundaries apply to every client.
    """

    dataset: HourlyDataset
    train_end: int
    val_end: int

    @property
    def boundaries(self):
        return self.train_end, self.val_end

    @property
    def train(self):
        return range(0, self.train_end)

    @property
    def val(self):
        return range(self.train_end, self.val_end)

    @property
    def test(self):
        return range(self.val_end, self.dataset.n_hours)

    def range_of(self, name):
        return {"train": self.train, "val": self.val, "test": self.test}[name]

    def with_dataset(self, dataset):
        if dataset.n_hours != self.dataset.n_hours:
            raise ValueError("replacement dataset must have the same length")
        return SplitDataset(dataset, self.train_end, self.val_end)


@dataclass(frozen=True)
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.asarray(self.mean, dtype=np.float64).tobytes())
        h.update(np.asarray(self.std, dtype=np.float64).tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------
# reading


def load_raw_csv(path, format=SourceFormat.WIDE):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    fmt = SourceFormat(format)
    if fmt is SourceFormat.WIDE:
        return _load_wide(path)
    return _load_ausgrid(path)


def _read_csv(path, **kwargs):
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, **kwargs)
    except pd.errors.EmptyDataError:
        raise EmptyDataset(f"{path} contains no data") from None
    except pd.errors.ParserError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise MalformedRow(int(m.group(1)) if m else -1, str(exc)) from None


def _parse_loads(frame, columns, report, client_of=None):
    """Convert string columns to float, recording clients with bad cells."""
    out = {}
    for col in columns:
        text = frame[col].str.strip().replace("", np.nan)
        bad = pd.to_numeric(text, errors="coerce").isna()
        # to_numeric may be off by an ulp; Python's float() round-trips exactly
        parsed = text.where(~bad, "nan").astype(np.float64)
        if bad.any():
            clients = [col] if client_of is None else sorted(set(client_of[bad]))
            for c in clients:
                report.setdefault(str(c), "missing or unparsable load value")
        out[col] = parsed.to_numpy(dtype=np.float64)
    return out


def _parse_timestamps(strings, first_line):
    ts = pd.to_datetime(strings, errors="coerce")
    bad = np.flatnonzero(pd.isna(ts))
    if len(bad):
        raise MalformedRow(first_line + int(bad[0]), f"bad timestamp {strings.iloc[bad[0]]!r}")
    return pd.DatetimeIndex(ts)


def _load_wide(path):
    header = _read_csv(path, nrows=0)
    if header.shape[1] < 2:
        raise MalformedRow(1, "wide layout needs a timestamp column and at least one client")
    ts_col, clients = header.columns[0], list(header.columns[1:])
    # the C parser with round_trip gives the same doubles as float(); columns
    # holding any non-numeric text come back as strings and take the slow path
    try:
        frame = pd.read_csv(path, dtype={ts_col: str}, float_precision="round_trip")
    except pd.errors.ParserError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise MalformedRow(int(m.group(1)) if m else -1, str(exc)) from None
    if len(frame) == 0:
        raise EmptyDataset(f"{path} has a header but no rows")
    # header is line 1, first data row is line 2
    timestamps = _parse_timestamps(frame[ts_col], first_line=2)
    report = {}
    numeric = [c for c in clients if pd.api.types.is_numeric_dtype(frame[c])]
    loads = {c: frame[c].to_numpy(dtype=np.float64) for c in numeric}
    for c in numeric:
        if np.isnan(loads[c]).any():
            report.setdefault(str(c), "missing or unparsable load value")
    text = [c for c in clients if c not in loads]
    if text:
        loads.update(_parse_loads(frame[text].astype(str).replace("nan", ""), text, report))
    long = pd.DataFrame({
        "timestamp": np.tile(timestamps.to_numpy(), len(clients)),
        "client_id": np.repeat(np.array(clients, dtype=object), len(frame)),
        "load": np.concatenate([loads[c] for c in clients]),
    })
    return RawDataset(_dedupe(long, report), SourceFormat.WIDE, report)


def _find_header_line(path, marker="Customer", max_lines=20):
    with open(path, newline="") as fh:
        for i, line in enumerate(fh):
            if i >= max_lines:
                break
            if line.split(",")[0].strip().strip('"') == marker:
                return i
    raise MalformedRow(1, f"no header row starting with {marker!r}")


def _load_ausgrid(path):
    header = _find_header_line(path)
    frame = _read_csv(path, skiprows=header)
    if len(frame) == 0:
        raise EmptyDataset(f"{path} has a header but no rows")
    cols = {c.strip().lower(): c for c in frame.columns}
    try:
        customer, category, date = cols["customer"], cols["consumption category"], cols["date"]
    except KeyError as exc:
        raise MalformedRow(header + 1, f"missing column {exc}") from None
    slots = [c for c in frame.columns if _HALF_HOUR_COLUMN.match(c)]
    if len(slots) != 48:
        raise MalformedRow(header + 1, f"expected 48 half-hour columns, found {len(slots)}")

    first_data_line = header + 2
    frame.index = np.arange(len(frame)) + first_data_line
    frame = frame[frame[category].str.strip() == AUSGRID_GENERAL_CONSUMPTION]
    if len(frame) == 0:
        raise EmptyDataset(f"{path} has no {AUSGRID_GENERAL_CONSUMPTION} rows")

    days = pd.to_datetime(frame[date].str.strip(), dayfirst=True, errors="coerce")
    bad = np.flatnonzero(days.isna())
    if len(bad):
        raise MalformedRow(int(frame.index[bad[0]]), f"bad date {frame[date].iloc[bad[0]]!r}")
    client_of = frame[customer].str.strip().to_numpy(dtype=object)
    report = {}
    loads = _parse_loads(frame, slots, report, client_of=client_of)

    # column k holds the half hour starting at k * 30 min (labels mark interval ends)
    day_ns = days.to_numpy().astype("datetime64[ns]")
    offsets = (np.arange(48) * 30).astype("timedelta64[m]").astype("timedelta64[ns]")
    long = pd.DataFrame({
        "timestamp": (day_ns[:, None] + offsets[None, :]).ravel(),
        "client_id": np.repeat(client_of, 48),
        "load": np.stack([loads[s] for s in slots], axis=1).ravel(),
    })
    return RawDataset(_dedupe(long, report), SourceFormat.AUSGRID, report)


def _dedupe(long, report):
    dup = long.duplicated(["timestamp", "client_id"], keep=False)
    if dup.any():
        for c in sorted(set(long.loc[dup, "client_id"])):
            report.setdefault(str(c), "duplicate timestamps")
        long = long[~long["client_id"].isin(long.loc[dup, "client_id"].unique())]
    long = long.dropna(subset=["load"])
    if len(long) == 0:
        raise EmptyDataset("no parsable load records")
    return long.sort_values(["client_id", "timestamp"], kind="stable").reset_index(drop=True)


# --------------------------------------------------------------------------
# resampling


def _native_resolution(frame):
    """Smallest positive step per client; all clients must agree."""
    steps = {}
    for client, ts in frame.groupby("client_id", sort=True)["timestamp"]:
        diffs = np.diff(ts.to_numpy().astype("datetime64[ns]").astype(np.int64))
        if len(diffs):
            steps[client] = int(diffs[diffs > 0].min())
    if not steps:
        raise InconsistentResolution("cannot infer resolution from single-record clients")
    distinct = set(steps.values())
    if len(distinct) > 1:
        raise InconsistentResolution(
            f"clients disagree on native resolution: {sorted(pd.to_timedelta(list(distinct)))}")
    step = distinct.pop()
    if HOUR.value % step:
        raise InconsistentResolution(f"resolution {pd.Timedelta(step)} does not divide one hour")
    return step


def resample_hourly(raw, region=Region.CUSTOM):
    """Aggregate to hourly totals and align all clients on a common range.

    Sub-hourly values are summed into the hour that contains their start.
    Hours with missing sub-intervals count as missing; any client with a
    missing hour inside the common range is dropped and listed in
    ``HourlyDataset.dropped``.
    """
    frame = raw.frame
    step = _native_resolution(frame)
    per_hour = HOUR.value // step
    dropped = dict(raw.report)

    hours = frame["timestamp"].dt.floor("h")
    grouped = frame.assign(hour=hours).groupby(["hour", "client_id"], sort=True)["load"]
    if per_hour == 1:
        wide = grouped.first().unstack("client_id")
    else:
        totals = grouped.sum().unstack("client_id")
        counts = grouped.count().unstack("client_id")
        wide = totals.where(counts == per_hour)

    present = wide.notna()
    starts = {c: present.index[present[c].to_numpy()].min() for c in wide.columns}
    ends = {c: present.index[present[c].to_numpy()].max() for c in wide.columns}
    start, end = max(starts.values()), min(ends.values())
    if start > end:
        raise NoCommonTimeRange(f"latest client start {start} is after earliest end {end}")
    index = pd.date_range(start, end, freq="h")
    wide = wide.reindex(index)

    keep = []
    for c in wide.columns:
        missing = int(wide[c].isna().sum())
        if missing:
            dropped.setdefault(str(c), f"{missing} missing hours")
        else:
            keep.append(c)
    for c in keep:
        if str(c) in dropped:
            # reported at load time but complete after alignment
            dropped.pop(str(c))
    if not keep:
        raise NoCommonTimeRange("every client has gaps in the common time range")
    wide = wide[keep]
    return HourlyDataset(wide.to_numpy(dtype=np.float64), index, [str(c) for c in keep],
                         region, dropped)


# --------------------------------------------------------------------------
# splitting and scaling


def split_sizes(n_hours):
    n_train = int(np.floor(TRAIN_FRACTION * n_hours))
    n_val = int(np.floor(VAL_FRACTION * n_hours))
    return n_train, n_val, n_hours - n_train - n_val


def split_dataset(ds):
    T = ds.n_hours
    if T < 10:
        raise TooShort(f"need at least 10 hours to split, got {T}")
    n_train, n_val, _ = split_sizes(T)
    return SplitDataset(ds, n_train, n_train + n_val)


def fit_standardizer(split):
    """Per-client mean and population standard deviation of the train range."""
    train = split.dataset.values[: split.train_end]
    if len(train) == 0:
        raise TooShort("train range is empty")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    for c, (m, s) in enumerate(zip(mean, std)):
        if not s > 1e-12 * max(1.0, abs(m)):
            raise ConstantSeries(split.dataset.client_ids[c])
    return ScalerParams(mean, std)


def apply_standardizer(ds, params):
    if isinstance(ds, SplitDataset):
        return ds.with_dataset(apply_standardizer(ds.dataset, params))
    return ds.with_values((ds.values - params.mean) / params.std)


def invert_standardizer(ds, params):
    if isinstance(ds, SplitDataset):
        return ds.with_dataset(invert_standardizer(ds.dataset, params))
    return ds.with_values(ds.values * params.std + params.mean)


def prepare(ds):
    """Split ``ds`` and standardize it with train-range statistics."""
    split = split_dataset(ds)
    params = fit_standardizer(split)
    return apply_standardizer(split, params), params
