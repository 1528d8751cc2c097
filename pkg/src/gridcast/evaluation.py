"""Rolling-origin test forecasts, MAE/MSE and result tables.

Metrics follow the flat average over clients, test origins and horizon
steps::

    MAE = 1 / (C * |T_test| * h) * sum_c sum_t sum_i |y[t+i, c] - yhat[t, t+i, c]|

MSE replaces the absolute residual by its square. Per-client partial sums
use numpy's pairwise summation and are combined with ``math.fsum`` in client
order, so the result does not depend on how forecasts were chunked.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from decimal import ROUND_HALF_EVEN, Decimal
from importlib import resources

import numpy as np

from .errors import EmptyForecastSet, HorizonOverrun, InsufficientHistory, MissingClientModel
from .windows import Strategy, enumerate_samples, origin_range

RESULT_COLUMNS = ("dataset", "family", "strategy", "h", "mae", "mse", "train_seconds", "manifest")
FAMILY_LABELS = {
    "persistence": "Persistence",
    "linreg": "Linear regression",
    "mlp": "MLP",
    "lstm": "LSTM",
    "transformer": "Transformer",
}
STRATEGY_ORDER = ("MV", "L", "G")


@dataclass
class ForecastSet:
    """Standardized forecasts and ground truth, shaped ``(C, N, h)``."""

    client_ids: tuple
    origins: np.ndarray
    pred: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        self.pred = np.asarray(self.pred, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=np.float64)
        if self.pred.shape != self.truth.shape or self.pred.ndim != 3:
            raise ValueError(f"pred {self.pred.shape} and truth {self.truth.shape} must match as (C, N, h)")

    @property
    def n_blocks(self):
        return self.pred.shape[0] * self.pred.shape[1]

    def blocks(self):
        for c, cid in enumerate(self.client_ids):
            yield cid, self.pred[c], self.truth[c]


class MetricAccumulator:
    """Streaming per-client sums of absolute and squared residuals."""

    def __init__(self, client_ids):
        self.client_ids = tuple(client_ids)
        self._abs = {c: [] for c in self.client_ids}
        self._sq = {c: [] for c in self.client_ids}
        self.count = 0

    def add(self, client, pred, truth):
        err = np.ascontiguousarray(pred - truth).ravel()
        self._abs[client].append(float(np.sum(np.abs(err))))
        self._sq[client].append(float(np.sum(err * err)))
        self.count += err.size

    def _total(self, parts):
        if self.count == 0:
            raise EmptyForecastSet("no forecasts to score")
        return math.fsum(math.fsum(parts[c]) for c in self.client_ids) / self.count

    def mae(self):
        return self._total(self._abs)

    def mse(self):
        return self._total(self._sq)


def _accumulate(fs):
    acc = MetricAccumulator(fs.client_ids)
    for cid, p, t in fs.blocks():
        acc.add(cid, p, t)
    return acc


def mae(fs):
    return _accumulate(fs).mae()


def mse(fs):
    return _accumulate(fs).mse()


def _model_for(models, key, fallbacks=()):
    if not isinstance(models, dict):
        return models
    for k in (key, *fallbacks):
        if k in models:
            return models[k]
    raise MissingClientModel(f"no model for {key!r}; have {sorted(models)[:5]}...")


def iter_forecasts(models, window, split, features, chunk=2048):
    """Yield ``(client_id, origins, pred (N, h), truth (N, h))`` per client.

    ``models`` is a single model or a dict: client id to model for the local
    strategy, ``"GLOBAL"`` or ``"ALL"`` for the shared models.
    """
    samples = enumerate_samples(window, "test", split, features)
    h = window.horizon
    ids = split.dataset.client_ids

    def checked(pred, n):
        if pred.shape[:2] != (n, h):
            raise HorizonOverrun(f"model produced {pred.shape[1]} steps for horizon {h}")
        return pred

    if window.kind is Strategy.MULTIVARIATE:
        model = _model_for(models, "ALL", ("GLOBAL",))
        for start in range(0, len(samples), chunk):
            idx = np.arange(start, min(start + chunk, len(samples)))
            pred = checked(model.predict(samples, idx), len(idx))
            truth = samples.targets(idx)
            for c, cid in enumerate(ids):
                yield cid, samples.origins[idx], pred[..., c], truth[..., c]
        return

    for cid, part in samples.partition().items():
        if window.kind is Strategy.LOCAL:
            model = _model_for(models, cid)
        else:
            model = _model_for(models, "GLOBAL", ("ALL",))
        for start in range(0, len(part), chunk):
            idx = np.arange(start, min(start + chunk, len(part)))
            pred = checked(model.predict(part, idx), len(idx))
            yield cid, part.origins[idx], pred[..., 0], part.targets(idx)[..., 0]


def forecast_test_set(models, window, split, features):
    """Materialize all test forecasts. For large runs prefer :func:`score`."""
    preds, truths, origins = {}, {}, {}
    for cid, o, p, t in iter_forecasts(models, window, split, features):
        preds.setdefault(cid, []).append(p)
        truths.setdefault(cid, []).append(t)
        origins.setdefault(cid, []).append(o)
    ids = split.dataset.client_ids
    if not preds:
        raise EmptyForecastSet("no test origins")
    pred = np.stack([np.concatenate(preds[c]) for c in ids])
    truth = np.stack([np.concatenate(truths[c]) for c in ids])
    return ForecastSet(ids, np.concatenate(origins[ids[0]]), pred, truth)


def _persistence_lag(models):
    from .models.baselines import PersistenceModel
    ms = list(models.values()) if isinstance(models, dict) else [models]
    lags = {m.lag for m in ms if isinstance(m, PersistenceModel)}
    if len(lags) == 1 and all(isinstance(m, PersistenceModel) for m in ms):
        return lags.pop()
    return None


def persistence_score(lag, window, split):
    """``(mae, mse)`` of a persistence forecast in O(T * C).

    Every residual of a persistence forecast is a lag difference
    ``y[j] - y[j - lag]``; hour ``j`` appears in as many test windows as there
    are origins ``t`` with ``t < j <= t + h``, so the rolling-origin sums are
    weighted sums of the difference series.
    """
    rows = split.range_of("test")
    origins = origin_range("test", rows.start, rows.stop, window.lookback, window.horizon)
    if len(origins) == 0:
        raise EmptyForecastSet("no test origins")
    h = window.horizon
    t0, t1 = int(origins[0]), int(origins[-1])
    if t0 + 1 - lag < 0:
        raise InsufficientHistory(f"lag {lag} reaches before the first hour")
    y = split.dataset.values
    j = np.arange(t0 + 1, t1 + h + 1)
    weight = (np.minimum(t1, j - 1) - np.maximum(t0, j - h) + 1).astype(np.float64)
    diff = y[j] - y[j - lag]
    n = y.shape[1] * len(origins) * h
    abs_parts = weight @ np.abs(diff)
    sq_parts = weight @ (diff * diff)
    return math.fsum(abs_parts) / n, math.fsum(sq_parts) / n


def score(models, window, split, features):
    """Return ``(mae, mse)`` without holding every forecast in memory."""
    lag = _persistence_lag(models)
    complete = not (isinstance(models, dict) and window.kind is Strategy.LOCAL
                    and set(models) != set(split.dataset.client_ids))
    if lag is not None and complete:
        return persistence_score(lag, window, split)
    acc = MetricAccumulator(split.dataset.client_ids)
    for cid, _, p, t in iter_forecasts(models, window, split, features):
        acc.add(cid, p, t)
    return acc.mae(), acc.mse()


# --------------------------------------------------------------------------
# results


@dataclass
class RunResult:
    dataset: str
    family: str
    strategy: str
    h: int
    mae: float
    mse: float
    train_seconds: float | None = None
    manifest: str = ""

    def __post_init__(self):
        for name in ("mae", "mse"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")

    def as_row(self, with_timing=True):
        row = asdict(self)
        row["mae"], row["mse"] = repr(float(self.mae)), repr(float(self.mse))
        if not with_timing or self.train_seconds is None:
            row["train_seconds"] = ""
        else:
            row["train_seconds"] = f"{self.train_seconds:.3f}"
        return row


def write_results_csv(runs, path_or_file, with_timing=False):
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in sorted(runs, key=lambda r: (r.dataset, r.family, r.strategy, r.h)):
            w.writerow(r.as_row(with_timing))
    finally:
        if own:
            fh.close()


def read_results_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            secs = row.get("train_seconds") or ""
            out.append(RunResult(row["dataset"], row["family"], row["strategy"], int(row["h"]),
                                 float(row["mae"]), float(row["mse"]),
                                 float(secs) if secs else None, row.get("manifest", "")))
    return out


@dataclass(frozen=True)
class ReferenceResult:
    model: str
    strategy: str
    input_days: str
    dataset: str
    h: int
    mae: float
    mse: float
    provenance: str


def load_reference_results(provenance=("external",)):
    """Published numbers shipped with the package, filtered by provenance tag."""
    text = resources.files("gridcast.data").joinpath("reference_results.csv").read_text("utf-8")
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        if provenance and row["provenance"] not in provenance:
            continue
        out.append(ReferenceResult(row["model"], row["strategy"], row["input_days"], row["dataset"],
                                   int(row["h"]), float(row["mae"]), float(row["mse"]),
                                   row["provenance"]))
    return out


def round3(x):
    """Round half-to-even at three decimals on the decimal representation."""
    return Decimal(repr(float(x))).quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN)


def _table_cells(runs, reference, metric):
    """Map (row label, strategy) to {(dataset, h): value}."""
    rows = {}
    for r in reference or ():
        rows.setdefault((r.model, r.strategy), {})[(r.dataset, r.h)] = getattr(r, metric)
    for r in runs:
        strat = Strategy.parse(r.strategy).short
        label = FAMILY_LABELS.get(r.family, r.family)
        rows.setdefault((label, strat), {})[(r.dataset, int(r.h))] = getattr(r, metric)
    return rows


def _emphasis(rows, columns):
    """Bold the best value per column, italicize the best per strategy; ties share."""
    marks = {}
    for col in columns:
        vals = {key: round3(cells[col]) for key, cells in rows.items() if col in cells}
        if not vals:
            continue
        best = min(vals.values())
        for strat in STRATEGY_ORDER:
            mine = {k: v for k, v in vals.items() if k[1] == strat}
            if mine:
                sbest = min(mine.values())
                for k, v in mine.items():
                    if v == sbest:
                        marks[(k, col)] = "italic"
        for k, v in vals.items():
            if v == best:
                marks[(k, col)] = "bold"
    return marks


def _ordered(rows):
    rank = {s: i for i, s in enumerate(STRATEGY_ORDER)}
    return sorted(rows, key=lambda k: (rank.get(k[1], len(rank)),))


def results_table(runs, layout="MAE", reference=None):
    """Render a markdown table: rows grouped MV / L / G, one column per dataset and horizon."""
    metric = layout.lower()
    rows = _table_cells(runs, reference, metric)
    columns = sorted({col for cells in rows.values() for col in cells},
                     key=lambda c: (c[0], c[1]))
    marks = _emphasis(rows, columns)
    header = ["Model", "strategy"] + [f"{d} {h}h" for d, h in columns]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for key in _ordered(rows):
        cells = []
        for col in columns:
            if col not in rows[key]:
                cells.append("-")
                continue
            text = f"{round3(rows[key][col]):.3f}"
            mark = marks.get((key, col))
            cells.append(f"**{text}**" if mark == "bold" else f"*{text}*" if mark == "italic" else text)
        lines.append("| " + " | ".join([key[0], key[1]] + cells) + " |")
    return "\n".join(lines) + "\n"


def results_table_csv(runs, layout="MAE", reference=None):
    metric = layout.lower()
    rows = _table_cells(runs, reference, metric)
    columns = sorted({col for cells in rows.values() for col in cells})
    marks = _emphasis(rows, columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "strategy"] + [f"{d}_{h}" for d, h in columns]
               + [f"{d}_{h}_mark" for d, h in columns])
    for key in _ordered(rows):
        vals = [f"{round3(rows[key][c]):.3f}" if c in rows[key] else "" for c in columns]
        w.writerow([key[0], key[1]] + vals + [marks.get((key, c), "") for c in columns])
    return buf.getvalue()


RUN_RESULT_FIELDS = tuple(f.name for f in fields(RunResult))
