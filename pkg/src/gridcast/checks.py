"""Finite-difference gradient checks for every autodiff op and model family."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Tensor, backward, relative_error
from .models import ModelSpec, build_model


def _weighted(out, w):
    # random linear functional so every output coordinate matters
    return ad.sum(ad.mul(out, w))


def op_battery(rng):
    """``{name: (f, point)}`` with ``f`` mapping a tensor list to a scalar.

    Inputs avoid the kinks of ``relu`` and keep ``log`` and ``power`` on
    positive arguments.
    """
    def away_from_zero(shape):
        x = rng.normal(size=shape)
        return np.where(np.abs(x) < 0.1, np.sign(x + 1e-12) * 0.1 + x, x)

    A, B = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    W = rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    M1, M2 = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    W3 = rng.normal(size=(2, 3, 5))
    X4 = rng.normal(size=(2, 3, 6))
    W4 = rng.normal(size=(2, 3, 6))
    row = rng.normal(size=(4,))
    g, b = rng.normal(size=(6,)), rng.normal(size=(6,))
    p = float(rng.uniform(1.5, 3.0))
    mask = np.triu(np.full((3, 3), -np.inf), k=1)
    S = rng.normal(size=(2, 3, 3))
    WS = rng.normal(size=(2, 3, 3))
    target = rng.normal(size=(3, 4))
    idx = rng.integers(0, 3, size=5)
    WG = rng.normal(size=(5, 4))

    return {
        "add": (lambda t: _weighted(ad.add(t[0], t[1]), W), [A, B]),
        "add_broadcast": (lambda t: _weighted(ad.add(t[0], t[1]), W), [A, row]),
        "sub": (lambda t: _weighted(ad.sub(t[0], t[1]), W), [A, B]),
        "mul": (lambda t: _weighted(ad.mul(t[0], t[1]), W), [A, B]),
        "mul_fanout": (lambda t: _weighted(ad.mul(t[0], t[0]), W), [A]),
        "div": (lambda t: _weighted(t[0] / t[1], W), [A, pos]),
        "power": (lambda t: _weighted(ad.power(t[0], p), W), [pos]),
        "exp": (lambda t: _weighted(ad.exp(t[0]), W), [A]),
        "log": (lambda t: _weighted(ad.log(t[0]), W), [pos]),
        "relu": (lambda t: _weighted(ad.relu(t[0]), W), [away_from_zero((3, 4))]),
        "sigmoid": (lambda t: _weighted(ad.sigmoid(t[0]), W), [A]),
        "tanh": (lambda t: _weighted(ad.tanh(t[0]), W), [A]),
        "matmul": (lambda t: _weighted(ad.matmul(t[0], t[1]), W3), [M1, M2]),
        "matmul_batched": (lambda t: _weighted(ad.matmul(t[0], ad.transpose(t[1])), WS),
                           [X4[:, :, :3], X4[:, :, 3:]]),
        "transpose": (lambda t: _weighted(ad.transpose(t[0], (1, 0, 2)), W4.transpose(1, 0, 2)), [X4]),
        "reshape": (lambda t: _weighted(ad.reshape(t[0], (4, 3)), W.reshape(4, 3)), [A]),
        "slice": (lambda t: _weighted(t[0][1:, ::2], W[1:, ::2]), [A]),
        "gather": (lambda t: _weighted(ad.slice_(t[0], idx), WG), [A]),
        "concat": (lambda t: _weighted(ad.concat([t[0], t[1]], axis=0), np.vstack([W, W])), [A, B]),
        "stack": (lambda t: _weighted(ad.stack([t[0], t[1]], axis=1), np.stack([W, W], 1)), [A, B]),
        "sum": (lambda t: _weighted(ad.sum(t[0], axis=1, keepdims=True), W[:, :1]), [A]),
        "mean": (lambda t: _weighted(ad.mean(t[0], axis=0), row), [A]),
        "softmax": (lambda t: _weighted(ad.softmax(t[0], axis=-1), W4), [X4]),
        "softmax_masked": (lambda t: _weighted(ad.softmax(ad.add(t[0], mask), axis=-1), WS), [S]),
        "layer_norm": (lambda t: _weighted(ad.layer_norm(t[0], t[1], t[2]), W4), [X4, g, b]),
        "dropout_eval": (lambda t: _weighted(ad.dropout(t[0], 0.5, training=False), W), [A]),
        "mse_loss": (lambda t: ad.mse_loss(t[0], target), [A]),
    }


def check_ops(n_seeds=20, eps=1e-5, tol=1e-4):
    """Run the op battery over ``n_seeds`` random instances; ``{op: worst report}``."""
    worst = {}
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed)
        for name, (f, point) in op_battery(rng).items():
            rep = ad.grad_check(f, point, eps=eps, tol=tol, seed=seed)
            if name not in worst or rep.worst_rel_error > worst[name].worst_rel_error:
                worst[name] = rep
    return worst


def tiny_model_spec(family, lookback=8, horizon=3):
    """Small float64 configurations used for model-level checks."""
    if family == "mlp":
        return ModelSpec("mlp", "global", lookback, horizon, hidden=6, dropout=0.0)
    if family == "lstm":
        return ModelSpec("lstm", "global", lookback, horizon, hidden=5, lstm_layers=2, dropout=0.0)
    if family == "transformer":
        return ModelSpec("transformer", "global", lookback, horizon, d_model=16, layers=1,
                         heads=2, ff_dim=32, dropout=0.0, causal_decoder=True)
    raise ValueError(f"no gradient check configuration for {family!r}")


def _model_inputs(model, rng, batch=3):
    spec = model.spec
    if spec.family.value == "mlp":
        return (rng.normal(size=(batch, spec.n_lags + 9)),)
    d_in = spec.input_size
    enc = rng.normal(size=(batch, spec.lookback, d_in))
    dec = rng.normal(size=(batch, spec.horizon, d_in))
    return (enc,) if spec.family.value == "lstm" else (enc, dec)


def check_model(spec, seed=0, eps=1e-5, tol=1e-4, max_coords=6):
    """Check parameter gradients of a full forward pass and MSE loss.

    ``max_coords`` coordinates are sampled per parameter tensor. A failing
    coordinate is re-measured with ``eps / 10``; the finer estimate is used
    only when the two estimates disagree, which happens when the step
    straddles a relu kink. A wrong gradient gives two agreeing estimates and
    still fails.
    """
    rng = np.random.default_rng(seed)
    model = build_model(spec, seed)
    model.train()
    inputs = _model_inputs(model, rng)
    target = rng.normal(size=(inputs[0].shape[0], spec.horizon, spec.output_size))

    def loss_value():
        with ad.no_grad():
            return ad.mse_loss(model(*inputs), target).item()

    grads = backward(ad.mse_loss(model(*inputs), target))
    worst, where, failures, n = 0.0, (), [], 0
    for name, p in model.named_parameters():
        analytic = grads.get(id(p), np.zeros_like(p.data))
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        for j in coords:
            orig = flat[j]

            def central(step):
                flat[j] = orig + step
                up = loss_value()
                flat[j] = orig - step
                down = loss_value()
                flat[j] = orig
                return (up - down) / (2 * step)

            numeric = central(eps)
            a = analytic.reshape(-1)[j]
            err = relative_error(a, numeric)
            if err > tol:
                # a relu kink inside [-eps, eps] makes the two step sizes disagree
                fine = central(eps / 10)
                if relative_error(numeric, fine) > tol:
                    numeric, err = fine, relative_error(a, fine)
            n += 1
            if err > worst:
                worst, where = err, (name, int(j))
            if err > tol:
                failures.append(((name, int(j)), float(a), numeric))
    return GradCheckReport(float(worst), worst <= tol, tol, n, where, failures)


def check_models(families=("mlp", "lstm", "transformer"), n_seeds=20, tol=1e-4):
    worst = {}
    for fam in families:
        spec = tiny_model_spec(fam)
        for seed in range(n_seeds):
            rep = check_model(spec, seed=seed, tol=tol)
            if fam not in worst or rep.worst_rel_error > worst[fam].worst_rel_error:
                worst[fam] = rep
    return worst


def broken_relu(a):
    """A relu whose backward forgets the mask; grad checks must reject it."""
    a = ad.as_tensor(a)
    return Tensor.from_op(np.maximum(a.data, 0.0), (a,), lambda g: (g,))
