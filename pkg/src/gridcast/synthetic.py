"""Seeded synthetic multi-client hourly load data."""
from __future__ import annotations

import numpy as np
import pandas as pd

from .ingest import HourlyDataset, Region


def daily_profile(hours):
    """Two-peak daily shape (morning and evening) on [0, 1]-ish scale."""
    h = np.asarray(hours) % 24
    morning = np.exp(-0.5 * ((h - 8.0) / 1.8) ** 2)
    evening = np.exp(-0.5 * ((h - 19.0) / 2.2) ** 2)
    return 0.25 + 0.6 * morning + 0.9 * evening


def weekly_factor(dayofweek):
    return np.where(np.asarray(dayofweek) >= 5, 0.7, 1.0)


def make_synthetic_dataset(n_clients=8, n_days=60, seed=0, start="2013-01-07",
                           noise=0.35, ar=0.6, region=Region.CUSTOM):
    """Clients sharing a daily and weekly load shape plus client-specific noise.

    Client ``c`` has load ``a_c + b_c * shape(t) + e_c(t)`` where ``e_c`` is
    AR(1) noise with coefficient ``ar`` and innovation scale ``noise`` (in
    units of ``b_c``). Loads stay positive.
    """
    rng = np.random.default_rng(seed)
    index = pd.date_range(start, periods=24 * n_days, freq="h")
    shape = daily_profile(index.hour.to_numpy()) * weekly_factor(index.dayofweek.to_numpy())
    T = len(index)
    level = rng.uniform(1.0, 3.0, n_clients)
    amplitude = rng.uniform(0.5, 2.0, n_clients)
    innovations = rng.normal(0.0, noise, (T, n_clients))
    e = np.zeros((T, n_clients))
    for t in range(1, T):
        e[t] = ar * e[t - 1] + innovations[t]
    values = level + amplitude * (shape[:, None] + e)
    values = np.maximum(values, 0.01)
    ids = [f"client_{c:03d}" for c in range(n_clients)]
    return HourlyDataset(values, index, ids, region)


def make_periodic_dataset(n_clients=2, n_weeks=6, seed=0, start="2013-01-07"):
    """Exactly weekly-periodic series (period 168 h) for persistence checks."""
    rng = np.random.default_rng(seed)
    week = rng.normal(size=(168, n_clients))
    values = np.tile(week, (n_weeks, 1))
    index = pd.date_range(start, periods=len(values), freq="h")
    return HourlyDataset(values, index, [f"p{c}" for c in range(n_clients)])
