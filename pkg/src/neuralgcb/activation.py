"""The sigma_s = max(0, u)^s activation family and its dual activations.

The dual of sigma_s is the normalised Gaussian expectation

    dual_s(rho) = c_s * E[sigma_s(X) sigma_s(Y)],  (X, Y) ~ N(0, [[1, rho], [rho, 1]])

which is the one-layer kernel map used by the NTK recursion in :mod:`neuralgcb.ntk`.

Conventions:

* ``sigma_prime(1, 0) == 0`` (subgradient choice at the kink; the left
  finite difference of ``sigma`` at 0 is 0 as well).
* ``sigma(0, x)`` is the step ``1{x > 0}`` and ``(2*0 - 1)!! := 1``, so
  ``c_0 = 2`` and ``dual(0, rho) = (pi - arccos rho) / pi``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import pi

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

__all__ = [
    "DualEvalConfig",
    "sigma",
    "sigma_prime",
    "norm_const",
    "dual",
    "dual_closed_form",
    "dual_quadrature",
    "dual_monte_carlo",
    "dual_derivative_check",
    "derivative_kernel_factor",
]

RHO_CLAMP = 1e-9
# phi(12) * 12^(2s) is below 1e-20 for every s used here
_X_MAX = 12.0


@dataclass(frozen=True)
class DualEvalConfig:
    quadrature_nodes: int = 200
    mc_samples: int = 1_000_000

    def __post_init__(self):
        if self.quadrature_nodes < 16:
            raise ValueError("quadrature_nodes must be >= 16")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be positive")


DEFAULT_DUAL_CFG = DualEvalConfig()


def _check_s(s, minimum=1):
    if int(s) != s or s < minimum:
        raise ValueError(f"smoothness s must be an integer >= {minimum}, got {s!r}")
    return int(s)


def sigma(s, x):
    """max(0, x)^s, elementwise. ``s = 0`` gives the step function."""
    s = _check_s(s, 0)
    x = np.asarray(x, dtype=float)
    if s == 0:
        out = (x > 0).astype(float)
    else:
        out = np.maximum(x, 0.0) ** s
    return out if out.ndim else float(out)


def sigma_prime(s, x):
    """Derivative of ``sigma``; ``sigma_prime(1, 0) == 0``."""
    s = _check_s(s, 1)
    x = np.asarray(x, dtype=float)
    if s == 1:
        out = (x > 0).astype(float)
    else:
        out = s * np.maximum(x, 0.0) ** (s - 1)
    return out if out.ndim else float(out)


def norm_const(s):
    """c_s = 2 / (2s - 1)!!, with c_0 = 2."""
    s = _check_s(s, 0)
    dfact = 1
    for k in range(1, 2 * s, 2):
        dfact *= k
    return 2.0 / dfact


def derivative_kernel_factor(s):
    """s^2 / (2s - 1): dual_s' = factor * dual_{s-1}."""
    s = _check_s(s, 1)
    return s * s / (2 * s - 1)


def _clamp_rho(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(np.abs(rho) > 1.0 + RHO_CLAMP) or np.any(np.isnan(rho)):
        bad = rho[np.abs(rho) > 1.0 + RHO_CLAMP] if rho.ndim else rho
        raise ValueError(f"correlation outside [-1, 1]: {bad}")
    return np.clip(rho, -1.0, 1.0)


def dual_closed_form(s, rho):
    """Arc-cosine closed forms, available for s in {0, 1}."""
    s = _check_s(s, 0)
    rho = _clamp_rho(rho)
    theta = np.arccos(rho)
    if s == 0:
        out = (pi - theta) / pi
    elif s == 1:
        out = (np.sqrt(np.maximum(1.0 - rho * rho, 0.0)) + rho * (pi - theta)) / pi
    else:
        raise ValueError("closed form only implemented for s in {0, 1}")
    return out if out.ndim else float(out)


@lru_cache(maxsize=8)
def _half_line_rule(n):
    nodes, weights = leggauss(n)
    x = 0.5 * _X_MAX * (nodes + 1.0)
    w = 0.5 * _X_MAX * weights * np.exp(-0.5 * x * x) / np.sqrt(2.0 * pi)
    return x, w


def _truncated_power_moment(s, c):
    """E[(Z - c)_+^s] for Z ~ N(0, 1), via I_s = (s-1) I_{s-2} - c I_{s-1}."""
    tail = ndtr(-c)
    if s == 0:
        return tail
    dens = np.exp(-0.5 * c * c) / np.sqrt(2.0 * pi)
    prev, cur = tail, dens - c * tail
    for k in range(2, s + 1):
        prev, cur = cur, (k - 1) * prev - c * cur
    return cur


def dual_quadrature(s, rho, nodes=DEFAULT_DUAL_CFG.quadrature_nodes):
    """dual_s(rho) by quadrature, valid for every s >= 0.

    Writes Y = rho X + sqrt(1 - rho^2) Z.  The expectation over Z given X is a
    Gaussian truncated power moment (closed form); the remaining one-dimensional
    integral over X > 0 is smooth and is done with Gauss-Legendre on [0, 12].
    """
    s = _check_s(s, 0)
    rho = _clamp_rho(rho)
    x, w = _half_line_rule(int(nodes))
    r = rho[..., None]
    b = np.sqrt(np.maximum(1.0 - r * r, 0.0))
    safe_b = np.where(b > 0, b, 1.0)
    inner = np.where(
        b > 0,
        safe_b**s * _truncated_power_moment(s, -r * x / safe_b),
        sigma(s, r * x),
    )
    out = norm_const(s) * np.sum(w * x**s * inner, axis=-1)
    # endpoints exactly: dual_s(1) = 1, dual_s(-1) = 0
    out = np.where(rho == 1.0, 1.0, np.where(rho == -1.0, 0.0, np.clip(out, 0.0, 1.0)))
    return out if out.ndim else float(out)


def dual(s, rho, cfg=DEFAULT_DUAL_CFG):
    """Dual activation dual_s(rho) in [0, 1]; accepts scalars or arrays."""
    s = _check_s(s, 0)
    if s <= 1:
        return dual_closed_form(s, rho)
    return dual_quadrature(s, rho, cfg.quadrature_nodes)


def dual_monte_carlo(s, rho, rng, n_samples=DEFAULT_DUAL_CFG.mc_samples):
    """Monte Carlo estimate of dual_s(rho) and its standard error.

    Independent of the quadrature path; used only for validation.
    """
    s = _check_s(s, 0)
    rho = float(_clamp_rho(rho))
    x = rng.standard_normal(n_samples)
    z = rng.standard_normal(n_samples)
    y = rho * x + np.sqrt(max(1.0 - rho * rho, 0.0)) * z
    vals = norm_const(s) * sigma(s, x) * sigma(s, y)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_samples))


def dual_derivative_check(s, rho, cfg=DEFAULT_DUAL_CFG, step=1e-5):
    """Residual |dual_s'(rho) - s^2/(2s-1) dual_{s-1}(rho)|, derivative by central differences."""
    s = _check_s(s, 2)
    if not abs(rho) < 1:
        raise ValueError("rho must lie strictly inside (-1, 1)")
    h = min(step, (1.0 - abs(rho)) / 2)
    fd = (dual(s, rho + h, cfg) - dual(s, rho - h, cfg)) / (2 * h)
    return abs(fd - derivative_kernel_factor(s) * dual(s - 1, rho, cfg))
