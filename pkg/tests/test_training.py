import numpy as np
import pytest

from gridcast.errors import NonFiniteGradient
from gridcast.models import ModelSpec, build_model
from gridcast.training import (AdamState, EarlyStopping, TrainConfig, TrainedModel, adamw_step,
                               client_seed, default_train_config, lr_at, run_strategy, train)
from gridcast.windows import enumerate_samples


def test_lr_warmup_end():
    assert lr_at(1000, TrainConfig(), 500) == pytest.approx(1e-4)
    assert lr_at(500, TrainConfig(), 500) == pytest.approx(5e-5)
    assert lr_at(0, TrainConfig(), 500) == 0.0


def test_lr_epoch_peaks():
    cfg = TrainConfig(warmup_steps=0)
    spe = 100
    assert lr_at(3 * spe, cfg, spe) == pytest.approx(1e-4 * 0.8 ** 3) == pytest.approx(5.12e-5)
    # half way through an epoch the cosine sits at half its peak
    assert lr_at(2 * spe + 50, cfg, spe) == pytest.approx(0.5 * 1e-4 * 0.64)


def test_lr_gamma_one_keeps_peaks():
    cfg = TrainConfig(warmup_steps=10, decay_gamma=1.0)
    peaks = [lr_at(10 + e * 40, cfg, 40) for e in range(5)]
    assert peaks == [pytest.approx(1e-4)] * 5


def test_lr_other_schedules():
    step = TrainConfig(warmup_steps=0, schedule="step", decay_gamma=0.5, base_lr=1e-3)
    assert lr_at(25, step, 10) == pytest.approx(1e-3 * 0.25)
    const = TrainConfig(warmup_steps=0, schedule="constant")
    assert lr_at(12345, const, 10) == 1e-4
    cos = TrainConfig(warmup_steps=0, schedule="cosine", max_steps=100)
    assert lr_at(50, cos, 10) == pytest.approx(0.5e-4)
    assert lr_at(100, cos, 10) == pytest.approx(0.0, abs=1e-20)


def test_unknown_schedule():
    with pytest.raises(ValueError):
        TrainConfig(schedule="linear")


def test_default_train_configs():
    assert default_train_config("transformer", "multivariate", 168, 24).batch_size == 32
    assert default_train_config("transformer", "global", 336, 720).batch_size == 64
    assert default_train_config("transformer", "global", 168, 720).batch_size == 128
    mlp = default_train_config("mlp", "local", 168, 24)
    assert (mlp.base_lr, mlp.decay_gamma) == (1e-3, 0.5)


def test_adamw_zero_grad_no_decay_is_fixed_point():
    p = np.array([1.0, -2.0, 3.0])
    state = AdamState.zeros_like([p])
    adamw_step([p], [np.zeros(3)], state, 1e-2, TrainConfig(weight_decay=0.0))
    np.testing.assert_array_equal(p, [1.0, -2.0, 3.0])


def test_adamw_decoupled_decay_only():
    p = np.array([1.0, -2.0])
    state = AdamState.zeros_like([p])
    adamw_step([p], [np.zeros(2)], state, 0.1, TrainConfig(weight_decay=0.5))
    np.testing.assert_allclose(p, [0.95, -1.9])


def test_adamw_first_step_is_sign_times_lr():
    p = np.array([0.0, 0.0])
    state = AdamState.zeros_like([p])
    adamw_step([p], [np.array([3.0, -0.2])], state, 0.01, TrainConfig(weight_decay=0.0))
    np.testing.assert_allclose(p, [-0.01, 0.01], rtol=1e-6)


def test_adamw_converges_on_quadratic():
    target = np.array([1.0, -3.0, 0.5])
    p = np.zeros(3)
    state = AdamState.zeros_like([p])
    cfg = TrainConfig(weight_decay=0.0)
    for _ in range(3000):
        adamw_step([p], [2 * (p - target)], state, 0.01, cfg)
    np.testing.assert_allclose(p, target, atol=1e-3)


def test_adamw_non_finite():
    p = np.zeros(2)
    with pytest.raises(NonFiniteGradient) as exc:
        adamw_step([p], [np.array([np.nan, 0.0])], AdamState.zeros_like([p]), 0.1, TrainConfig(),
                   names=["w"])
    assert "w" in str(exc.value)


def test_early_stopping_patience():
    es = EarlyStopping(2)
    stops = [es.update(v, i) for i, v in enumerate([5.0, 4.0, 4.0, 4.0])]
    assert stops == [False, False, False, True]
    assert es.best_loss == 4.0 and es.best_step == 1


def test_early_stopping_keeps_best_snapshot():
    es = EarlyStopping(3)
    for i, v in enumerate([3.0, 1.0, 2.0, 0.5, 0.7]):
        es.update(v, i, snapshot=lambda i=i: {"step": i})
    assert es.best_state == {"step": 3}


def tiny_spec(family="transformer", strategy="global", n_clients=3, L=24, h=6):
    if family == "transformer":
        return ModelSpec(family, strategy, L, h, n_clients=n_clients, d_model=8, heads=2, layers=1,
                         dropout=0.0)
    return ModelSpec(family, strategy, L, h, n_clients=n_clients, hidden=8, dropout=0.0)


def test_training_reduces_validation_loss(prepared):
    split, _, F = prepared
    spec = tiny_spec("lstm")
    tr = enumerate_samples(spec.window, "train", split, F)
    va = enumerate_samples(spec.window, "val", split, F)
    cfg = TrainConfig(batch_size=32, base_lr=3e-3, warmup_steps=5, max_epochs=3,
                      eval_interval_steps=10 ** 9, seed=0)
    model = build_model(spec, 0)
    from gridcast.training import validation_loss
    before = validation_loss(model, va)
    trained = train(model, tr, va, cfg)
    assert trained.history["best_val_loss"] < before
    assert len(trained.history["val_loss"]) == 3


def test_returns_best_not_last(prepared):
    split, _, F = prepared
    spec = tiny_spec("mlp")
    tr = enumerate_samples(spec.window, "train", split, F)
    va = enumerate_samples(spec.window, "val", split, F)
    cfg = TrainConfig(batch_size=16, base_lr=5e-3, warmup_steps=0, max_epochs=4,
                      eval_interval_steps=7, patience_evals=100, seed=1)
    trained = train(build_model(spec, 1), tr, va, cfg)
    from gridcast.training import validation_loss
    assert validation_loss(trained.model, va) == pytest.approx(trained.history["best_val_loss"],
                                                               rel=1e-12)


def test_training_is_deterministic(prepared):
    split, _, F = prepared
    spec = ModelSpec("transformer", "global", 24, 6, n_clients=3, d_model=8, heads=2, layers=1,
                     dropout=0.1)
    tr = enumerate_samples(spec.window, "train", split, F)
    va = enumerate_samples(spec.window, "val", split, F)
    cfg = TrainConfig(batch_size=64, base_lr=1e-3, warmup_steps=5, max_epochs=1, seed=3)
    a = train(build_model(spec, 3), tr, va, cfg).state_dict()
    b = train(build_model(spec, 3), tr, va, cfg).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_local_strategy_per_client_seeds(prepared):
    split, _, F = prepared
    spec = tiny_spec("mlp", "local")
    cfg = TrainConfig(batch_size=64, base_lr=1e-3, warmup_steps=0, max_epochs=1, seed=0)
    run = run_strategy(spec, split, F, cfg)
    assert list(run.models) == list(split.dataset.client_ids)
    seeds = {m.seed for m in run.models.values()}
    assert len(seeds) == 3
    assert client_seed(0, "a") == client_seed(0, "a") != client_seed(1, "a")
    total = sum(run.sample_counts["per_client_train"].values())
    glob = run_strategy(tiny_spec("mlp", "global"), split, F, cfg)
    assert glob.sample_counts["train"] == total


def test_local_continues_after_failure(prepared):
    split, _, F = prepared
    # linreg with more lags than samples per client fails everywhere but is reported
    spec = ModelSpec("linreg", "local", 200, 6, n_clients=3)
    run = run_strategy(spec, split, F, TrainConfig())
    assert set(run.failures) == set(split.dataset.client_ids)
    assert run.models == {}


def test_trained_model_save_load(tmp_path, prepared):
    split, _, F = prepared
    spec = tiny_spec("transformer")
    tr = enumerate_samples(spec.window, "train", split, F)
    va = enumerate_samples(spec.window, "val", split, F)
    trained = train(build_model(spec, 0), tr, va,
                    TrainConfig(batch_size=64, max_epochs=1, warmup_steps=1), scaler_hash="abc")
    trained.save(tmp_path / "m")
    back = TrainedModel.load(tmp_path / "m")
    assert back.scaler_hash == "abc"
    assert np.array_equal(back.predict(va, np.arange(5)), trained.predict(va, np.arange(5)))


def test_parallel_local_matches_serial(prepared):
    split, _, F = prepared
    spec = tiny_spec("mlp", "local")
    cfg = TrainConfig(batch_size=64, base_lr=1e-3, warmup_steps=0, max_epochs=1, seed=0)
    a = run_strategy(spec, split, F, cfg, workers=1)
    b = run_strategy(spec, split, F, cfg, workers=2)
    assert list(a.models) == list(b.models)
    for k in a.models:
        sa, sb = a.models[k].state_dict(), b.models[k].state_dict()
        assert all(np.array_equal(sa[n], sb[n]) for n in sa)
