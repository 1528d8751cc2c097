"""Time and calendar covariates for hourly timestamps.

Nine features per hour, in this column order::

    hour_sin, hour_cos, dow_sin, dow_cos, month_sin, month_cos,
    is_workday, is_holiday, next_day_workday

Hour, weekday (Monday = 0) and month (January = 0) are encoded on the unit
circle with periods 24, 7 and 12. A workday is Monday to Friday and not a
public holiday; ``next_day_workday`` applies the same test to ``ts + 24h``.
"""
from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from .errors import OutOfCalendarRange
from .ingest import Region

N_FEATURES = 9
FEATURE_NAMES = (
    "hour_sin", "hour_cos", "dow_sin", "dow_cos", "month_sin", "month_cos",
    "is_workday", "is_holiday", "next_day_workday",
)

_CALENDAR_FILES = {
    Region.PORTUGAL: "holidays_portugal.csv",
    Region.NEW_SOUTH_WALES: "holidays_nsw.csv",
}
_YEARS_LINE = re.compile(r"#\s*years:\s*(\d{4})\s*-\s*(\d{4})")


class FeatureVector(NamedTuple):
    hour_sin: float
    hour_cos: float
    dow_sin: float
    dow_cos: float
    month_sin: float
    month_cos: float
    is_workday: float
    is_holiday: float
    next_day_workday: float


@dataclass(frozen=True)
class HolidayCalendar:
    """Public holidays of one region over a closed range of years.

    ``years=None`` means unbounded coverage, used for the empty calendar of
    custom datasets.
    """

    region: Region
    holidays: frozenset
    years: tuple | None = None

    @property
    def fixed_dates(self):
        """(month, day) pairs that are holidays in every covered year."""
        if self.years is None or not self.holidays:
            return frozenset()
        first, last = self.years
        by_year = {y: {(d.month, d.day) for d in self.holidays if d.year == y}
                   for y in range(first, last + 1)}
        return frozenset.intersection(*map(frozenset, by_year.values()))

    @property
    def movable_dates(self):
        fixed = self.fixed_dates
        return frozenset(d for d in self.holidays if (d.month, d.day) not in fixed)

    def covers(self, day):
        return self.years is None or self.years[0] <= day.year <= self.years[1]

    @classmethod
    def from_csv(cls, path, region=Region.CUSTOM):
        """Read a ``date,name`` file; an optional ``# years: A-B`` first line sets coverage."""
        text = Path(path).read_text(encoding="utf-8")
        return cls._parse(text, Region(region))

    @classmethod
    def _parse(cls, text, region):
        years = None
        first = text.lstrip().splitlines()[0] if text.strip() else ""
        m = _YEARS_LINE.match(first)
        if m:
            years = (int(m.group(1)), int(m.group(2)))
        rows = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        dates = set()
        for ln in rows[1:]:
            dates.add(dt.date.fromisoformat(ln.split(",", 1)[0].strip()))
        if years is None and dates:
            years = (min(d.year for d in dates), max(d.year for d in dates))
        return cls(region, frozenset(dates), years)

    @classmethod
    def for_region(cls, region):
        region = Region(region)
        if region is Region.CUSTOM:
            return cls(region, frozenset(), None)
        ref = resources.files("gridcast.data").joinpath(_CALENDAR_FILES[region])
        return cls._parse(ref.read_text(encoding="utf-8"), region)


def _check_covered(days, cal):
    if cal.years is None or len(days) == 0:
        return
    years = days.year
    lo, hi = int(years.min()), int(years.max())
    if lo < cal.years[0] or hi > cal.years[1]:
        raise OutOfCalendarRange(
            f"dates span {lo}-{hi} but the {cal.region.value} calendar covers "
            f"{cal.years[0]}-{cal.years[1]}")


def _workday(days, holiday):
    return (days.dayofweek < 5) & ~holiday


def _is_holiday(days, cal):
    if not cal.holidays:
        return np.zeros(len(days), dtype=bool)
    table = pd.DatetimeIndex(sorted(pd.Timestamp(d) for d in cal.holidays))
    return np.asarray(days.isin(table))


def build_feature_matrix(timestamps, cal):
    """Return a ``len(timestamps) x 9`` float64 matrix, one row per hour."""
    ts = pd.DatetimeIndex(timestamps)
    out = np.empty((len(ts), N_FEATURES), dtype=np.float64)
    if len(ts) == 0:
        return out
    days = ts.normalize()
    next_days = days + pd.Timedelta(days=1)
    _check_covered(days, cal)
    _check_covered(next_days, cal)

    hour = 2.0 * np.pi * ts.hour.to_numpy() / 24.0
    dow = 2.0 * np.pi * ts.dayofweek.to_numpy() / 7.0
    month = 2.0 * np.pi * (ts.month.to_numpy() - 1) / 12.0
    holiday = _is_holiday(days, cal)
    out[:, 0], out[:, 1] = np.sin(hour), np.cos(hour)
    out[:, 2], out[:, 3] = np.sin(dow), np.cos(dow)
    out[:, 4], out[:, 5] = np.sin(month), np.cos(month)
    out[:, 6] = _workday(days, holiday)
    out[:, 7] = holiday
    out[:, 8] = _workday(next_days, _is_holiday(next_days, cal))
    return out


def encode_timestamp(ts, cal):
    row = build_feature_matrix(pd.DatetimeIndex([pd.Timestamp(ts)]), cal)[0]
    return FeatureVector(*map(float, row))
