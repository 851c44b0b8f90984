"""Analytic NTK of the sigma_s network, Gram matrices and kernel ridge regression."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .activation import DEFAULT_DUAL_CFG, DualEvalConfig, _clamp_rho, derivative_kernel_factor, dual

__all__ = [
    "NtkSpec",
    "KernelMatrix",
    "FactorizationError",
    "ntk_scalar",
    "ntk_self_value",
    "ntk_gram",
    "ntk_cross",
    "krr_predict",
    "info_gain",
    "effective_dimension",
]

UNIT_TOL = 1e-6


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky failed: the regularised kernel matrix is not positive definite."""


@dataclass(frozen=True)
class NtkSpec:
    L: int
    s: int
    dual_cfg: DualEvalConfig = field(default=DEFAULT_DUAL_CFG)

    def __post_init__(self):
        if self.L < 1 or self.s < 1:
            raise ValueError("need L >= 1 and s >= 1")


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    entries: np.ndarray
    lam: float = 1.0

    def __post_init__(self):
        K = np.array(self.entries, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError("kernel matrix must be square")
        if K.size and np.max(np.abs(K - K.T)) > 1e-12 * max(1.0, np.max(np.abs(K))):
            raise ValueError("kernel matrix is not symmetric")
        K.setflags(write=False)
        object.__setattr__(self, "entries", K)

    @property
    def size(self):
        return self.entries.shape[0]


def ntk_scalar(spec, rho):
    """Theta^(L)(rho) for unit-norm inputs with x.x' = rho (scalar or array)."""
    rho = _clamp_rho(rho)
    deriv = derivative_kernel_factor(spec.s)
    # sigmas[l] = Sigma^(l), dots[l-1] = Sigma_dot^(l)
    sigmas = [rho]
    dots = []
    for _ in range(spec.L):
        prev = sigmas[-1]
        dots.append(deriv * dual(spec.s - 1, prev, spec.dual_cfg))
        sigmas.append(dual(spec.s, prev, spec.dual_cfg))
    dots.append(np.ones_like(rho))
    theta = np.zeros_like(rho)
    # Theta = sum_{l=1}^{L+1} Sigma^(l-1) prod_{j=l}^{L+1} Sigma_dot^(j), accumulated from the top
    tail = np.ones_like(rho)
    for l in range(spec.L + 1, 0, -1):
        tail = tail * dots[l - 1]
        theta = theta + sigmas[l - 1] * tail
    return theta if np.ndim(theta) else float(theta)


def ntk_self_value(spec):
    """Theta^(L)(1) = sum_{j=0}^{L} (s^2/(2s-1))^j."""
    r = derivative_kernel_factor(spec.s)
    return float(sum(r**j for j in range(spec.L + 1)))


def _unit_rows(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ValueError("kernel inputs must be unit vectors")
    return X


def ntk_cross(spec, X, Z):
    """Rectangular NTK block k(X_i, Z_j)."""
    X, Z = _unit_rows(X), _unit_rows(Z)
    return ntk_scalar(spec, np.clip(X @ Z.T, -1.0, 1.0))


def ntk_gram(spec, X, lam=1.0):
    X = _unit_rows(X)
    rho = np.clip(X @ X.T, -1.0, 1.0)
    rho = 0.5 * (rho + rho.T)
    np.fill_diagonal(rho, 1.0)
    return KernelMatrix(ntk_scalar(spec, rho), lam)


def _chol(A):
    try:
        return cholesky(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"Cholesky factorisation failed: {exc}") from exc


def krr_predict(K, Y, k_x, lam):
    """k_x^T (lam I + K)^{-1} Y; ``k_x`` may be a vector or an (n_test, t) array."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    Kmat = K.entries if isinstance(K, KernelMatrix) else np.asarray(K, float)
    Y = np.asarray(Y, dtype=float)
    k_x = np.asarray(k_x, dtype=float)
    t = Kmat.shape[0]
    if Y.shape != (t,) or k_x.shape[-1] != t:
        raise ValueError("inconsistent dimensions")
    if t == 0:
        return np.zeros(k_x.shape[:-1]) if k_x.ndim > 1 else 0.0
    C = _chol(Kmat + lam * np.eye(t))
    alpha = cho_solve((C, True), Y)
    out = k_x @ alpha
    return out if np.ndim(out) else float(out)


def info_gain(K, lam):
    """log det(I + K/lam) for the given design."""
    Kmat = K.entries if isinstance(K, KernelMatrix) else np.asarray(K, float)
    t = Kmat.shape[0]
    if t == 0:
        return 0.0
    C = _chol(np.eye(t) + Kmat / lam)
    return float(2.0 * np.sum(np.log(np.diag(C))))


def effective_dimension(K, lam, method="cholesky"):
    """tr(K (K + lam I)^{-1}) = t - lam * tr((K + lam I)^{-1})."""
    Kmat = K.entries if isinstance(K, KernelMatrix) else np.asarray(K, float)
    t = Kmat.shape[0]
    if t == 0:
        return 0.0
    if method == "eigen":
        ev = np.linalg.eigvalsh(Kmat)
        return float(np.sum(ev / (ev + lam)))
    C = _chol(Kmat + lam * np.eye(t))
    Cinv = solve_triangular(C, np.eye(t), lower=True)
    return float(t - lam * np.sum(Cinv * Cinv))
