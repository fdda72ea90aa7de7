"""Index-tied reference predictors: global mean, user/item biases and biased MF.

All of them are fit on training entries only and can only personalise rows
and columns that appeared there. Anything else falls back to zero bias and
zero factors, i.e. to the global mean plus whatever side is known.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .data import SparseRatings
from .errors import DivergedError, NoDataError


def _train_arrays(data: SparseRatings, idx):
    idx = np.flatnonzero(idx) if np.asarray(idx).dtype == bool else np.asarray(idx, dtype=np.int64)
    if len(idx) == 0:
        raise NoDataError("no training entries")
    return data.rows[idx], data.cols[idx], data.values[idx]


class _Predictor:
    alpha: float
    beta: float

    def predict_cells(self, rows, cols) -> np.ndarray:
        raise NotImplementedError

    def predict_entries(self, data, split, rows, cols, exclude=None, builder=None) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        return np.clip(self.predict_cells(rows, cols), self.alpha, self.beta)

    def predict(self, row, col) -> float:
        return float(self.predict_entries(None, None, [row], [col])[0])


@dataclass
class MeanPredictor(_Predictor):
    mu_global: float
    alpha: float = 1.0
    beta: float = 5.0

    def predict_cells(self, rows, cols):
        return np.full(len(rows), self.mu_global)


def mean_baseline(data: SparseRatings, train_idx) -> MeanPredictor:
    _, _, v = _train_arrays(data, train_idx)
    return MeanPredictor(float(v.mean()), data.alpha, data.beta)


@dataclass
class BiasPredictor(_Predictor):
    mu_global: float
    b_user: np.ndarray
    b_item: np.ndarray
    alpha: float = 1.0
    beta: float = 5.0

    def predict_cells(self, rows, cols):
        return self.mu_global + self.b_user[rows] + self.b_item[cols]


def bias_baseline(data: SparseRatings, train_idx, reg=10.0, iters=20) -> BiasPredictor:
    """Damped user and item offsets fit by alternating regularised means."""
    r, c, v = _train_arrays(data, train_idx)
    mu = float(v.mean())
    b_user = np.zeros(data.n_rows)
    b_item = np.zeros(data.n_cols)
    n_user = np.bincount(r, minlength=data.n_rows)
    n_item = np.bincount(c, minlength=data.n_cols)
    resid = v - mu
    for _ in range(iters):
        b_item = np.bincount(c, resid - b_user[r], minlength=data.n_cols) / (reg + n_item + 1e-300)
        b_user = np.bincount(r, resid - b_item[c], minlength=data.n_rows) / (reg + n_user + 1e-300)
    b_item = np.where(n_item > 0, b_item, 0.0)
    b_user = np.where(n_user > 0, b_user, 0.0)
    return BiasPredictor(mu, b_user, b_item, data.alpha, data.beta)


@dataclass
class MfModel(_Predictor):
    """``mu + b_user[i] + b_item[j] + P[i] @ Q[j]`` over original row/column indices."""

    P: np.ndarray
    Q: np.ndarray
    b_user: np.ndarray
    b_item: np.ndarray
    mu_global: float
    reg: float = 0.0
    alpha: float = 1.0
    beta: float = 5.0

    def predict_cells(self, rows, cols):
        return (self.mu_global + self.b_user[rows] + self.b_item[cols]
                + np.einsum("ij,ij->i", self.P[rows], self.Q[cols]))


@njit(cache=True)
def _sgd_epoch(order, rows, cols, vals, mu, bu, bi, P, Q, lr, reg):
    sq = 0.0
    k = P.shape[1]
    for n in order:
        u = rows[n]
        i = cols[n]
        pred = mu + bu[u] + bi[i]
        for f in range(k):
            pred += P[u, f] * Q[i, f]
        e = vals[n] - pred
        sq += e * e
        bu[u] += lr * (e - reg * bu[u])
        bi[i] += lr * (e - reg * bi[i])
        for f in range(k):
            pu = P[u, f]
            P[u, f] += lr * (e * Q[i, f] - reg * pu)
            Q[i, f] += lr * (e * pu - reg * Q[i, f])
    return sq


def mf_train(data: SparseRatings, train_idx, r=3, reg=0.0, lr=0.01, epochs=300, seed=0,
             init_std=0.1) -> MfModel:
    """Biased matrix factorization fit by per-entry SGD in seeded random order."""
    if r < 1:
        raise ValueError("rank must be >= 1")
    rows, cols, vals = _train_arrays(data, train_idx)
    rng = np.random.default_rng(seed)
    P = rng.normal(0.0, init_std, (data.n_rows, r))
    Q = rng.normal(0.0, init_std, (data.n_cols, r))
    P[np.bincount(rows, minlength=data.n_rows) == 0] = 0.0
    Q[np.bincount(cols, minlength=data.n_cols) == 0] = 0.0
    bu = np.zeros(data.n_rows)
    bi = np.zeros(data.n_cols)
    mu = float(vals.mean())
    for epoch in range(epochs):
        sq = _sgd_epoch(rng.permutation(len(vals)), rows, cols, vals, mu, bu, bi, P, Q,
                        float(lr), float(reg))
        if not np.isfinite(sq):
            raise DivergedError(f"matrix factorization diverged in epoch {epoch + 1}")
    return MfModel(P, Q, bu, bi, mu, reg, data.alpha, data.beta)
