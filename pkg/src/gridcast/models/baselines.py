"""Persistence and ridge linear regression forecasters."""
from __future__ import annotations

import numpy as np
import scipy.linalg

from ..errors import InsufficientHistory, SingularSystem, TooFewSamples
from .spec import ModelSpec


def persistence_forecast(series, t, h, lag):
    """Forecast ``series[t+1 .. t+h]`` by the values ``lag`` hours earlier."""
    series = np.asarray(series)
    if lag < h:
        raise ValueError(f"lag {lag} shorter than horizon {h} would read future values")
    first = t + 1 - lag
    if first < 0 or first + h > len(series):
        raise InsufficientHistory(f"origin {t} with lag {lag} needs history from index {first}")
    return series[first:first + h].copy()


class PersistenceModel:
    trainable = False

    def __init__(self, spec: ModelSpec):
        if spec.lag < spec.horizon:
            raise ValueError(f"lag {spec.lag} shorter than horizon {spec.horizon} would read future values")
        self.spec = spec
        self.lag = spec.lag

    def predict(self, samples, idx):
        idx = np.asarray(idx, dtype=np.int64)
        h = samples.spec.horizon
        t = samples.origins[idx]
        if (t + 1 - self.lag).min(initial=0) < 0:
            raise InsufficientHistory(f"lag {self.lag} reaches before the first hour")
        rows = t[:, None] + 1 - self.lag + np.arange(h)[None, :]
        if samples.multivariate:
            return samples.values[rows]
        return samples.values[rows, samples.clients[idx][:, None]][..., None]

    def state_dict(self):
        return {}

    def load_state_dict(self, state):
        return self


def _with_bias(X):
    return np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)


def _solve_normal(gram, rhs, ridge):
    p = gram.shape[0]
    if ridge == 0 and np.linalg.matrix_rank(gram) < p:
        raise SingularSystem(f"design matrix is rank deficient ({p} columns) and ridge is 0")
    A = gram + ridge * np.eye(p)
    try:
        factor = scipy.linalg.cho_factor(A, lower=False, check_finite=True)
    except np.linalg.LinAlgError:
        raise SingularSystem("normal equations are not positive definite") from None
    return scipy.linalg.cho_solve(factor, rhs)


def linreg_fit(X, Y, ridge=1e-6):
    """Ridge solution of ``[X, 1] W ~ Y`` via the normal equations.

    Minimizes ``||[X, 1] W - Y||^2 + ridge * ||W||^2`` column by column with a
    Cholesky solve. Returns ``W`` of shape ``(n_features + 1, n_outputs)``;
    the last row is the intercept.
    """
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    p = X.shape[1] + 1
    if X.shape[0] < p:
        raise TooFewSamples(f"{X.shape[0]} samples for {p} coefficients")
    Xb = _with_bias(X)
    return _solve_normal(Xb.T @ Xb, Xb.T @ Y, ridge)


def linreg_predict(W, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return _with_bias(X) @ W


class LinearRegressionModel:
    """h-output ridge regression on lagged loads plus origin-hour features.

    ``fit`` accumulates the Gram matrix in chunks so a pooled (global) fit
    over many clients never materializes the full design matrix.
    """

    trainable = False

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.weights = None

    def fit(self, samples, chunk=8192):
        n_lags = self.spec.n_lags
        p = n_lags + 9 + 1
        if len(samples) < p:
            raise TooFewSamples(f"{len(samples)} training samples for {p} coefficients")
        gram = np.zeros((p, p))
        rhs = np.zeros((p, self.spec.horizon))
        for start in range(0, len(samples), chunk):
            idx = np.arange(start, min(start + chunk, len(samples)))
            Xb = _with_bias(samples.lagged_inputs(idx, n_lags))
            Y = samples.targets(idx)[..., 0]
            gram += Xb.T @ Xb
            rhs += Xb.T @ Y
        self.weights = np.ascontiguousarray(_solve_normal(gram, rhs, self.spec.ridge))
        return self

    def predict(self, samples, idx):
        X = samples.lagged_inputs(idx, self.spec.n_lags)
        return linreg_predict(self.weights, X)[..., None]

    def state_dict(self):
        return {"weights": self.weights.copy()}

    def load_state_dict(self, state):
        self.weights = np.asarray(state["weights"], dtype=np.float64).copy()
        return self
