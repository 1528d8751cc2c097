"""Small end-to-end experiments used as training-loop oracles.

``memorize`` fits a model to one fixed batch until the training MSE drops
below a threshold. ``strategy_trend`` trains the three strategies with a tiny
Transformer on a seeded synthetic dataset and reports their test MAE.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .calendar import HolidayCalendar, build_feature_matrix
from .evaluation import score
from .ingest import prepare
from .models import ModelSpec, build_model
from .synthetic import make_synthetic_dataset
from .training import AdamState, TrainConfig, adamw_step, lr_at, run_strategy
from .windows import enumerate_samples


def tiny_transformer(strategy="global", lookback=48, horizon=24, n_clients=1):
    return ModelSpec("transformer", strategy, lookback, horizon, n_clients=n_clients, d_model=16,
                     layers=1, heads=2, dropout=0.0)


@dataclass
class MemorizationResult:
    family: str
    reached: bool
    steps: int
    final_mse: float
    seconds: float
    losses: list = field(repr=False, default_factory=list)


def memorize(spec, samples, lr, max_steps=5000, threshold=1e-3, warmup=100, seed=0):
    """Run AdamW on a single fixed batch (all of ``samples``) until the
    training MSE falls below ``threshold`` or ``max_steps`` is reached."""
    model = build_model(spec, seed)
    model.train()
    params = model.parameters()
    state = AdamState.zeros_like([p.data for p in params])
    cfg = TrainConfig(base_lr=lr, warmup_steps=warmup, schedule="constant", weight_decay=0.0)
    idx = np.arange(len(samples))
    inputs = model.inputs(samples, idx)
    target = samples.targets(idx)
    losses = []
    t0 = time.perf_counter()
    for step in range(max_steps):
        loss = ad.mse_loss(model(*inputs), target)
        value = loss.item()
        losses.append(value)
        if value < threshold or not math.isfinite(value):
            break
        grads = ad.backward(loss)
        g = [grads.get(id(p), np.zeros_like(p.data)) for p in params]
        adamw_step([p.data for p in params], g, state, lr_at(step, cfg, 1), cfg)
    # losses[k] is measured after k updates
    return MemorizationResult(spec.family.value, losses[-1] < threshold, len(losses) - 1,
                              losses[-1], time.perf_counter() - t0, losses)


def memorization_batch(spec, n_samples=10, seed=0):
    """``n_samples`` training windows drawn from a small synthetic dataset."""
    ds = make_synthetic_dataset(4, 30, seed=seed)
    split, _ = prepare(ds)
    F = build_feature_matrix(ds.timestamps, HolidayCalendar.for_region("Custom"))
    s = enumerate_samples(spec.window, "train", split, F)
    return s.subset(np.random.default_rng(seed).choice(len(s), n_samples, replace=False))


TREND_CONFIG = dict(n_clients=8, n_days=60, lookback=48, horizon=24, batch_size=64, lr=1e-3,
                    warmup=50, epochs=10, patience=3)


def strategy_trend(seed, n_clients=8, n_days=60, lookback=48, horizon=24, batch_size=64, lr=1e-3,
                   warmup=50, epochs=10, patience=3):
    """Test MAE of global, local and multivariate tiny Transformers.

    Local MAE pools all clients, which equals the mean of per-client MAEs
    because every client has the same number of test windows.
    """
    ds = make_synthetic_dataset(n_clients, n_days, seed=seed)
    split, _ = prepare(ds)
    F = build_feature_matrix(ds.timestamps, HolidayCalendar.for_region("Custom"))
    out = {}
    for strategy in ("global", "local", "multivariate"):
        spec = tiny_transformer(strategy, lookback, horizon, n_clients)
        cfg = TrainConfig(batch_size=batch_size, base_lr=lr, warmup_steps=warmup,
                          max_epochs=epochs, patience_evals=patience, eval_interval_steps=10 ** 9,
                          seed=seed)
        run = run_strategy(spec, split, F, cfg)
        out[strategy] = score(run.models, spec.window, split, F)[0]
    return out
