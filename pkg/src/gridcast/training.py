"""Optimization: learning-rate schedules, AdamW, early stopping and strategy runs."""
from __future__ import annotations

import hashlib
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import Diverged, EmptyTrainingSet, NonFiniteGradient
from .models import Family, ModelSpec, build_model, load_checkpoint, save_checkpoint
from .windows import Strategy, enumerate_samples, shuffle_batches

log = logging.getLogger(__name__)

SCHEDULES = ("epoch_cosine", "cosine", "step", "constant")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    base_lr: float = 1e-4
    warmup_steps: int = 1000
    decay_gamma: float = 0.8
    eval_interval_steps: int = 10_000
    patience_evals: int = 10
    max_epochs: int = 100
    seed: int = 0
    weight_decay: float = 0.01
    schedule: str = "epoch_cosine"
    max_steps: int | None = None
    clip_norm: float | None = None
    by_client_batches: bool = False
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}; choose from {SCHEDULES}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        object.__setattr__(self, "betas", tuple(self.betas))

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def default_train_config(family, strategy, lookback, horizon, **overrides):
    """Per-family defaults for batch size and learning-rate schedule."""
    family, strategy = Family.parse(family), Strategy.parse(strategy)
    cfg = {}
    if family is Family.TRANSFORMER:
        if strategy is Strategy.MULTIVARIATE:
            cfg["batch_size"] = 32
        elif lookback >= 336 and horizon >= 720:
            cfg["batch_size"] = 64
    if family is Family.MLP:
        cfg.update(base_lr=1e-3, decay_gamma=0.5, schedule="step", warmup_steps=0)
    cfg.update(overrides)
    return TrainConfig(**cfg)


def lr_at(step, cfg, steps_per_epoch):
    """Learning rate used for optimizer step ``step`` (0-based).

    Linear warmup from 0 to ``base_lr`` over ``warmup_steps``. Afterwards,
    with ``e`` completed epochs since warmup and ``p`` the fraction of the
    current epoch done:

    * ``epoch_cosine``: ``base_lr * gamma**e * (1 + cos(pi p)) / 2``
    * ``cosine``: one cosine from ``base_lr`` to 0 over the step budget
    * ``step``: ``base_lr * gamma**e``
    * ``constant``: ``base_lr``
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    base, warm = cfg.base_lr, cfg.warmup_steps
    if step < warm:
        return base * step / warm
    s = step - warm
    spe = max(1, int(steps_per_epoch))
    epoch, pos = divmod(s, spe)
    if cfg.schedule == "epoch_cosine":
        return base * cfg.decay_gamma ** epoch * 0.5 * (1.0 + math.cos(math.pi * pos / spe))
    if cfg.schedule == "step":
        return base * cfg.decay_gamma ** epoch
    if cfg.schedule == "cosine":
        total = cfg.max_steps if cfg.max_steps else cfg.max_epochs * spe
        frac = min(1.0, s / max(1, total - warm))
        return base * 0.5 * (1.0 + math.cos(math.pi * frac))
    return base


# --------------------------------------------------------------------------
# AdamW


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adamw_step(params, grads, state, lr, cfg, names=None):
    """In-place AdamW update of the arrays in ``params``.

    Weight decay is decoupled: ``w <- w - lr * wd * w`` comes first, then the
    bias-corrected Adam step.
    """
    for i, g in enumerate(grads):
        if not np.isfinite(g).all():
            name = names[i] if names else f"#{i}"
            raise NonFiniteGradient(f"non-finite gradient for parameter {name} "
                                    f"at optimizer step {state.t + 1}")
    b1, b2 = cfg.betas
    state.t += 1
    c1, c2 = 1.0 - b1 ** state.t, 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if cfg.weight_decay:
            p -= lr * cfg.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return state


# --------------------------------------------------------------------------
# early stopping


class EarlyStopping:
    """Track validation losses and keep the best parameters.

    Training should stop once ``patience`` consecutive evaluations fail to
    improve strictly on the best loss.
    """

    def __init__(self, patience):
        self.patience = patience
        self.best_loss = math.inf
        self.best_step = None
        self.best_state = None
        self.bad_evals = 0
        self.history = []

    def update(self, loss, step, snapshot=None):
        """Record an evaluation; returns True when training should stop."""
        self.history.append((int(step), float(loss)))
        if loss < self.best_loss:
            self.best_loss, self.best_step = float(loss), int(step)
            self.best_state = snapshot() if snapshot else None
            self.bad_evals = 0
        else:
            self.bad_evals += 1
        return self.bad_evals >= self.patience


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainedModel:
    spec: ModelSpec
    model: object
    seed: int = 0
    history: dict = field(default_factory=dict)
    scaler_hash: str | None = None

    def predict(self, samples, idx=None):
        if idx is None:
            idx = np.arange(len(samples))
        return self.model.predict(samples, idx)

    def state_dict(self):
        return self.model.state_dict()

    def save(self, path):
        return save_checkpoint(path, self.spec, self.model.state_dict(), seed=self.seed,
                               scaler_hash=self.scaler_hash,
                               extra={"history": _jsonable(self.history)})

    @classmethod
    def load(cls, path):
        spec, state, manifest = load_checkpoint(path)
        model = build_model(spec, manifest.get("seed") or 0)
        model.load_state_dict(state)
        history = manifest.get("extra", {}).get("history", {})
        return cls(spec, model, manifest.get("seed") or 0, history, manifest.get("scaler_hash"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def validation_loss(model, samples, batch_size=512):
    """Mean squared error over every target value of ``samples``."""
    total, count = 0.0, 0
    idx = np.arange(len(samples))
    for start in range(0, len(idx), batch_size):
        chunk = idx[start:start + batch_size]
        pred = model.predict(samples, chunk)
        err = pred - samples.targets(chunk)
        total += float(np.sum(err * err))
        count += err.size
    return total / count


def _clip(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads


def train(model, train_samples, val_samples, cfg: TrainConfig, scaler_hash=None, progress=None):
    """Fit ``model`` and return the best-validation checkpoint as a :class:`TrainedModel`.

    Validation runs every ``eval_interval_steps`` optimizer steps and at the
    end of every epoch; both count towards the early-stopping patience.
    """
    if len(train_samples) == 0:
        raise EmptyTrainingSet("no training samples")
    spec = model.spec
    started = time.perf_counter()
    if not getattr(model, "trainable", False):
        if hasattr(model, "fit"):
            model.fit(train_samples)
        history = {"train_seconds": time.perf_counter() - started,
                   "n_train_samples": len(train_samples)}
        return TrainedModel(spec, model, cfg.seed, history, scaler_hash)
    if len(val_samples) == 0:
        raise EmptyTrainingSet("no validation samples")

    params = model.parameters()
    names = [n for n, _ in model.named_parameters()]
    state = AdamState.zeros_like([p.data for p in params])
    model.rng = np.random.default_rng([cfg.seed, 1])
    model.train()
    stopper = EarlyStopping(cfg.patience_evals)
    n = len(train_samples)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    losses, step, stop_reason = [], 0, "max_epochs"

    def evaluate():
        loss = validation_loss(model, val_samples)
        model.train()
        if not math.isfinite(loss):
            raise Diverged(f"validation loss is {loss} at step {step}")
        return stopper.update(loss, step, model.state_dict)

    done = False
    for epoch in range(cfg.max_epochs):
        batches = shuffle_batches(train_samples, cfg.batch_size, [cfg.seed, 2, epoch],
                                  by_client=cfg.by_client_batches)
        last_eval = None
        for idx in batches:
            lr = lr_at(step, cfg, steps_per_epoch)
            inputs = model.inputs(train_samples, idx)
            target = train_samples.targets(idx)
            loss = ad.mse_loss(model(*inputs), target)
            if not math.isfinite(loss.item()):
                raise Diverged(f"training loss is {loss.item()} at step {step}")
            grads = ad.backward(loss)
            g = [grads.get(id(p), np.zeros_like(p.data)) for p in params]
            if cfg.clip_norm:
                g = _clip(g, cfg.clip_norm)
            adamw_step([p.data for p in params], g, state, lr, cfg, names)
            losses.append(loss.item())
            step += 1
            if step % cfg.eval_interval_steps == 0:
                last_eval = step
                if evaluate():
                    done, stop_reason = True, "early_stopping"
                    break
            if cfg.max_steps and step >= cfg.max_steps:
                done, stop_reason = True, "max_steps"
                break
        if progress:
            progress(epoch, step, losses[-1], stopper.best_loss)
        if not done and last_eval != step and evaluate():
            done, stop_reason = True, "early_stopping"
        if done:
            break
    if stop_reason == "max_steps" and stopper.history and stopper.history[-1][0] != step:
        evaluate()

    if stopper.best_state is not None:
        model.load_state_dict(stopper.best_state)
    model.eval()
    history = {
        "train_loss": losses,
        "val_loss": stopper.history,
        "best_val_loss": stopper.best_loss,
        "best_step": stopper.best_step,
        "n_steps": step,
        "stop_reason": stop_reason,
        "steps_per_epoch": steps_per_epoch,
        "n_train_samples": n,
        "n_val_samples": len(val_samples),
        "train_seconds": time.perf_counter() - started,
    }
    return TrainedModel(spec, model, cfg.seed, history, scaler_hash)


# --------------------------------------------------------------------------
# strategies


def client_seed(master_seed, client_id):
    """Stable per-client seed derived from the master seed."""
    digest = hashlib.sha256(f"{master_seed}:{client_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class StrategyRun:
    spec: ModelSpec
    models: dict
    failures: dict = field(default_factory=dict)
    sample_counts: dict = field(default_factory=dict)
    train_seconds: float = 0.0

    def manifest(self):
        return {
            "spec": self.spec.to_dict(),
            "sample_counts": self.sample_counts,
            "failures": self.failures,
            "models": {k: {kk: v for kk, v in m.history.items()
                           if kk not in ("train_loss",)} for k, m in self.models.items()},
        }


def _fit_one(args):
    spec, seed, train_s, val_s, cfg, scaler_hash = args
    model = build_model(spec, seed)
    return train(model, train_s, val_s, cfg.replace(seed=seed), scaler_hash)


def make_model_spec(family, strategy, lookback, horizon, n_clients, **kwargs):
    return ModelSpec(family=family, strategy=strategy, lookback=lookback, horizon=horizon,
                     n_clients=n_clients, **kwargs)


def run_strategy(spec: ModelSpec, split, features, cfg: TrainConfig, workers=1, scaler_hash=None):
    """Train one model (multivariate, global) or one per client (local).

    Local runs use per-client seeds derived from ``cfg.seed`` and continue past
    single-client failures, which are reported in ``StrategyRun.failures``.
    """
    window = spec.window
    train_s = enumerate_samples(window, "train", split, features)
    val_s = enumerate_samples(window, "val", split, features)
    counts = {"train": len(train_s), "val": len(val_s)}
    started = time.perf_counter()
    if spec.strategy is not Strategy.LOCAL:
        model = build_model(spec, cfg.seed)
        trained = train(model, train_s, val_s, cfg, scaler_hash)
        key = "ALL" if spec.strategy is Strategy.MULTIVARIATE else "GLOBAL"
        return StrategyRun(spec, {key: trained}, {}, counts, time.perf_counter() - started)

    train_parts, val_parts = train_s.partition(), val_s.partition()
    clients = list(split.dataset.client_ids)
    jobs = [(spec, client_seed(cfg.seed, c), train_parts[c], val_parts[c], cfg, scaler_hash)
            for c in clients]
    models, failures = {}, {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {c: pool.submit(_fit_one, job) for c, job in zip(clients, jobs)}
            for c in clients:
                try:
                    models[c] = futures[c].result()
                except Exception as exc:  # keep going with the remaining clients
                    failures[c] = f"{type(exc).__name__}: {exc}"
    else:
        for c, job in zip(clients, jobs):
            try:
                models[c] = _fit_one(job)
            except Exception as exc:
                failures[c] = f"{type(exc).__name__}: {exc}"
    for c in failures:
        log.warning("local model for client %s failed: %s", c, failures[c])
    counts["per_client_train"] = {c: len(train_parts[c]) for c in clients}
    return StrategyRun(spec, models, failures, counts, time.perf_counter() - started)
