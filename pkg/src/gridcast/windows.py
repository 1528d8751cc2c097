"""Sliding-window samples for the multivariate, local and global strategies.

A sample is anchored at an origin hour ``t``. Its encoder block covers hours
``t-L+1 .. t`` and its decoder/target blocks cover ``t+1 .. t+h``. Each
encoder row is ``[load(s), calendar features]``; decoder rows have the same
layout with the load entries set to zero.

Samples are never materialized up front: :class:`SampleSet` keeps the origin
and client index arrays and gathers windows on demand, so counting samples on
a full-size dataset is cheap.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .calendar import N_FEATURES
from .errors import SplitTooShort

ALL_CLIENTS = -1
BENCHMARK_HORIZONS = (24, 96, 720)


class Strategy(str, enum.Enum):
    MULTIVARIATE = "multivariate"
    LOCAL = "local"
    GLOBAL = "global"

    @property
    def short(self):
        return {"multivariate": "MV", "local": "L", "global": "G"}[self.value]

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        text = str(text).strip().lower()
        aliases = {"mv": "multivariate", "l": "local", "g": "global"}
        return cls(aliases.get(text, text))


@dataclass(frozen=True)
class StrategySpec:
    kind: Strategy
    lookback: int
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "kind", Strategy.parse(self.kind))
        if self.lookback < 1 or self.horizon < 1:
            raise ValueError(f"lookback and horizon must be >= 1, got {self.lookback}, {self.horizon}")

    def input_size(self, n_clients):
        return n_clients + N_FEATURES if self.kind is Strategy.MULTIVARIATE else 1 + N_FEATURES

    def output_size(self, n_clients):
        return n_clients if self.kind is Strategy.MULTIVARIATE else 1


@dataclass(frozen=True)
class WindowSample:
    encoder_input: np.ndarray
    decoder_input: np.ndarray
    target: np.ndarray
    client: int
    origin: int


def origin_range(kind_split, start, stop, lookback, horizon):
    """Valid origins for a split occupying rows ``[start, stop)``.

    Train origins keep the whole lookback inside the split. Validation and
    test origins lie in the split but read history from before it.
    """
    last = stop - horizon - 1
    if kind_split == "train":
        first = start + lookback - 1
    else:
        first = max(start, lookback - 1)
    if last < first:
        raise SplitTooShort(lookback, horizon, stop - start)
    return np.arange(first, last + 1)


class SampleSet:
    """An ordered, lazily gathered collection of window samples."""

    def __init__(self, values, features, spec, origins, clients, client_ids):
        self.values = values
        self.features = features
        self.spec = spec
        self.origins = np.asarray(origins, dtype=np.int64)
        self.clients = np.asarray(clients, dtype=np.int64)
        self.client_ids = tuple(client_ids)

    def __len__(self):
        return len(self.origins)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.subset(np.arange(len(self))[i])
        enc, dec, tgt = self.batch(np.array([i]))
        return WindowSample(enc[0], dec[0], tgt[0], int(self.clients[i]), int(self.origins[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def multivariate(self):
        return self.spec.kind is Strategy.MULTIVARIATE

    @property
    def input_size(self):
        return self.spec.input_size(self.values.shape[1])

    @property
    def output_size(self):
        return self.spec.output_size(self.values.shape[1])

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(self.values, self.features, self.spec,
                         self.origins[idx], self.clients[idx], self.client_ids)

    def partition(self):
        """Split into per-client sample sets, keyed by client id, in column order."""
        if self.multivariate:
            return {"ALL": self}
        out = {}
        for c in np.unique(self.clients):
            out[self.client_ids[c]] = self.subset(np.flatnonzero(self.clients == c))
        return out

    def batch(self, idx):
        """Gather ``(encoder, decoder, target)`` arrays for sample indices ``idx``.

        Shapes are ``(B, L, d_in)``, ``(B, h, d_in)`` and ``(B, h, d_out)``.
        """
        idx = np.asarray(idx, dtype=np.int64)
        L, h = self.spec.lookback, self.spec.horizon
        t = self.origins[idx]
        enc_rows = t[:, None] + np.arange(-L + 1, 1)[None, :]
        dec_rows = t[:, None] + np.arange(1, h + 1)[None, :]
        if self.multivariate:
            enc_load = self.values[enc_rows]
            target = self.values[dec_rows]
        else:
            c = self.clients[idx][:, None]
            enc_load = self.values[enc_rows, c][..., None]
            target = self.values[dec_rows, c][..., None]
        n_load = enc_load.shape[-1]
        enc = np.concatenate([enc_load, self.features[enc_rows]], axis=-1)
        dec = np.zeros((len(idx), h, n_load + N_FEATURES))
        dec[..., n_load:] = self.features[dec_rows]
        return enc, dec, target

    def lagged_inputs(self, idx, n_lags):
        """Flat regression inputs: last ``n_lags`` loads then origin-hour features."""
        idx = np.asarray(idx, dtype=np.int64)
        if n_lags > self.spec.lookback:
            raise ValueError(f"{n_lags} lags exceed lookback {self.spec.lookback}")
        t = self.origins[idx]
        rows = t[:, None] + np.arange(-n_lags + 1, 1)[None, :]
        lags = self.values[rows, self.clients[idx][:, None]]
        return np.concatenate([lags, self.features[t]], axis=1)

    def targets(self, idx=None):
        if idx is None:
            idx = np.arange(len(self))
        idx = np.asarray(idx, dtype=np.int64)
        rows = self.origins[idx][:, None] + np.arange(1, self.spec.horizon + 1)[None, :]
        if self.multivariate:
            return self.values[rows]
        return self.values[rows, self.clients[idx][:, None]][..., None]


def enumerate_samples(spec, split_name, split, features, clients=None):
    """Samples of ``split_name`` (train/val/test) for a standardized split dataset.

    Multivariate gives one sample per origin; local and global give one sample
    per (client, origin) ordered client-major. ``clients`` restricts the
    univariate strategies to a subset of client column indices.
    """
    ds = split.dataset
    rows = split.range_of(split_name)
    if len(features) != ds.n_hours:
        raise ValueError(f"{len(features)} feature rows for {ds.n_hours} hours")
    origins = origin_range(split_name, rows.start, rows.stop, spec.lookback, spec.horizon)
    if spec.kind is Strategy.MULTIVARIATE:
        o, c = origins, np.full(len(origins), ALL_CLIENTS)
    else:
        cols = np.arange(ds.n_clients) if clients is None else np.asarray(clients)
        o = np.tile(origins, len(cols))
        c = np.repeat(cols, len(origins))
    return SampleSet(ds.values, features, spec, o, c, ds.client_ids)


def count_samples(spec, split_name, split):
    """Number of samples without touching any data."""
    rows = split.range_of(split_name)
    n = len(origin_range(split_name, rows.start, rows.stop, spec.lookback, spec.horizon))
    return n if spec.kind is Strategy.MULTIVARIATE else n * split.dataset.n_clients


def shuffle_batches(samples, batch_size, seed, by_client=False):
    """Seeded permutation of ``range(len(samples))`` cut into batches.

    The final short batch is kept. With ``by_client`` every batch holds a
    single client's samples.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    n = len(samples)
    order = rng.permutation(n)
    if not by_client:
        return [order[i:i + batch_size] for i in range(0, n, batch_size)]
    clients = np.asarray(samples.clients)[order]
    batches = []
    for c in np.unique(clients):
        mine = order[clients == c]
        batches += [mine[i:i + batch_size] for i in range(0, len(mine), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]
