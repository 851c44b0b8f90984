"""Incremental design in the dual (t x t) space.

Features are gradients at initialisation, g_i = g(x_i; W0).  With the 1/m
normalisation of the GetPredictions routine,

    Z = lam I + (1/m) sum_i g_i g_i^T,      sigma^2(x) = g^T Z^{-1} g / m,

and Woodbury turns both into statements about the t x t matrix
Khat_ij = g_i . g_j / m:

    sigma^2(x)      = (khat(x, x) - khat_X(x)^T (lam I + Khat)^{-1} khat_X(x)) / lam
    det Z / det(lam I_p) = det(I + Khat / lam).

States are immutable.  Appending writes one new row into a buffer shared with
the parent state; the parent only ever reads its own leading block, and a
second append to the same parent copies the buffer first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .network import gradients

__all__ = [
    "DesignState",
    "ConfidenceParams",
    "DesignError",
    "empty_design",
    "design_add",
    "posterior_variance",
    "posterior_variances",
    "logdet_ratio",
    "mark_retrained",
    "beta_practical",
    "beta_neural_ucb",
]


class DesignError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ConfidenceParams:
    S: float
    nu: float
    lam: float
    delta: float

    def __post_init__(self):
        if not (self.S > 0 and self.nu >= 0 and self.lam > 0):
            raise ValueError(f"invalid confidence parameters {self}")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


class _Store:
    """Growable storage shared by a chain of states."""

    __slots__ = ("X", "G", "K", "C", "Y", "length")

    def __init__(self, d, p, capacity):
        self.X = np.empty((capacity, d))
        self.G = np.empty((capacity, p))
        self.K = np.empty((capacity, capacity))
        self.C = np.zeros((capacity, capacity))
        self.Y = np.empty(capacity)
        self.length = 0

    def copy(self, t, capacity):
        new = _Store(self.X.shape[1], self.G.shape[1], capacity)
        new.X[:t] = self.X[:t]
        new.G[:t] = self.G[:t]
        new.K[:t, :t] = self.K[:t, :t]
        new.C[:t, :t] = self.C[:t, :t]
        new.Y[:t] = self.Y[:t]
        new.length = t
        return new


@dataclass(frozen=True, eq=False)
class DesignState:
    cfg: object  # NetConfig
    W0: object  # Weights at initialisation
    lam: float
    t: int
    logdet_now: float
    logdet_fb: float
    fb: int
    _store: _Store

    @property
    def pts(self):
        return self._store.X[: self.t].copy()

    @property
    def Y(self):
        return self._store.Y[: self.t].copy()

    @property
    def Khat(self):
        return self._store.K[: self.t, : self.t].copy()

    @property
    def chol(self):
        return self._store.C[: self.t, : self.t].copy()

    @property
    def features(self):
        return self._store.G[: self.t]

    def __len__(self):
        return self.t


def empty_design(cfg, W0, lam, capacity=64):
    if not lam > 0:
        raise ValueError("lam must be positive")
    store = _Store(cfg.d, cfg.n_params, capacity)
    return DesignState(cfg, W0, float(lam), 0, 0.0, 0.0, 0, store)


def _cross(state, feats):
    # khat_X(x) for each row of feats: (n, t)
    return feats @ state.features.T / state.cfg.m


def design_add(state, x, y, feature=None):
    """Return a new state with (x, y) appended; ``state`` is left untouched."""
    x = np.asarray(x, dtype=float)
    g = gradients(state.cfg, state.W0, x)[0] if feature is None else np.asarray(feature, float)
    m, t, lam = state.cfg.m, state.t, state.lam
    k_vec = _cross(state, g[None, :])[0]
    k_new = float(g @ g) / m
    C = state._store.C[:t, :t]
    v = solve_triangular(C, k_vec, lower=True) if t else np.zeros(0)
    schur = lam + k_new - float(v @ v)
    if not schur > 0:
        raise DesignError(f"Cholesky extension failed: Schur complement {schur} <= 0")

    store = state._store
    if store.length != t or t == store.X.shape[0]:
        cap = store.X.shape[0]
        store = store.copy(t, cap * 2 if t == cap else cap)
    store.X[t] = x
    store.G[t] = g
    store.K[t, :t] = k_vec
    store.K[:t, t] = k_vec
    store.K[t, t] = k_new
    store.C[t, :t] = v
    store.C[t, t] = np.sqrt(schur)
    store.C[:t, t] = 0.0
    store.Y[t] = y
    store.length = t + 1
    return DesignState(
        state.cfg,
        state.W0,
        lam,
        t + 1,
        state.logdet_now + float(np.log(schur / lam)),
        state.logdet_fb,
        state.fb,
        store,
    )


def posterior_variances(state, X=None, features=None):
    """sigma^2 for each row of X (or for precomputed gradient features)."""
    feats = gradients(state.cfg, state.W0, X) if features is None else np.atleast_2d(features)
    m, t, lam = state.cfg.m, state.t, state.lam
    prior = np.einsum("ij,ij->i", feats, feats) / m
    if t == 0:
        return prior / lam
    V = solve_triangular(state._store.C[:t, :t], _cross(state, feats).T, lower=True)
    var = (prior - np.einsum("ij,ij->j", V, V)) / lam
    return np.clip(var, 0.0, prior / lam)


def posterior_variance(state, x):
    return float(posterior_variances(state, np.asarray(x, float)[None, :])[0])


def logdet_ratio(state):
    """det(Z) / det(Z_fb)."""
    return float(np.exp(state.logdet_now - state.logdet_fb))


def mark_retrained(state):
    return DesignState(
        state.cfg, state.W0, state.lam, state.t, state.logdet_now, state.logdet_now, state.t,
        state._store,
    )


def beta_practical(cp):
    """2S + nu sqrt((2/lam) log(1/delta)): constant width used by NeuralGCB."""
    return 2.0 * cp.S + cp.nu * np.sqrt(2.0 / cp.lam * np.log(1.0 / cp.delta))


def beta_neural_ucb(cp, state=None, logdet=None):
    """2S + nu sqrt(log det(V_t)/det(lam I) + 2 log(1/delta))."""
    ld = state.logdet_now if logdet is None else logdet
    return 2.0 * cp.S + cp.nu * np.sqrt(ld + 2.0 * np.log(1.0 / cp.delta))
