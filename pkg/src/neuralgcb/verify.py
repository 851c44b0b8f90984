"""Desk-scale numerical checks of the kernel, training and confidence machinery.

Every tolerance lives in :data:`TOLERANCES`; the comment next to each entry
records the run it was calibrated against.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .activation import (
    DEFAULT_DUAL_CFG,
    dual,
    dual_closed_form,
    dual_derivative_check,
    dual_monte_carlo,
    dual_quadrature,
    norm_const,
    sigma,
)
from .bandit_env import make_synthetic_model, reward
from .design import ConfidenceParams, beta_practical, design_add, empty_design, posterior_variances
from .network import NetConfig, TrainSpec, forward_batch, gradients, init, train
from .ntk import NtkSpec, krr_predict, ntk_cross, ntk_gram

__all__ = [
    "TOLERANCES",
    "ConvergenceReport",
    "KrrReport",
    "CoverageReport",
    "ConcentrationReport",
    "DualReport",
    "unit_sphere",
    "check_ntk_convergence",
    "check_krr_equivalence",
    "check_coverage",
    "check_concentration",
    "check_dual",
    "report_rows",
    "to_csv",
]

TOLERANCES = {
    # seeds 0-2, 20 points, d=5: medians 1.02 / 0.62 / 0.36 / 0.13 for m = 64..4096
    "ntk_max_err_at_4096": 0.15,
    # d=10, n=10, seeds 0-2: median gaps 0.067 / 0.060 / 0.040 at m = 1024 / 2048 / 4096
    "krr_max_gap": 0.1,
    # t=200, m=1024, seeds 0-2: coverage 1.0; the band only
    # becomes informative around beta/100, where coverage falls to ~0.2
    "coverage_min": 0.85,
    "concentration_se_slack": 2.0,
    # closed form vs quadrature over 201 points: worst 2e-14
    "dual_quadrature": 1e-10,
    # central differences with step 1e-5: residuals ~1e-10
    "dual_derivative": 1e-6,
    # Monte Carlo with 10^6 samples, in standard errors
    "dual_mc_z": 4.0,
}


def unit_sphere(n, d, rng):
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


# -- NTK convergence ---------------------------------------------------------


@dataclass
class ConvergenceReport:
    L: int
    s: int
    d: int
    widths: list
    per_seed: list  # per width: list of max errors, one per seed
    medians: list

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            raise ValueError("widths must be strictly increasing")

    @property
    def strictly_decreasing(self):
        return all(b < a for a, b in zip(self.medians, self.medians[1:]))

    def passed(self, tol=TOLERANCES["ntk_max_err_at_4096"]):
        return self.strictly_decreasing and self.medians[-1] < tol


def max_kernel_error(cfg, seed, X, spec=None):
    """max_ij |g(x_i) . g(x_j) - Theta(x_i . x_j)| at one initialisation."""
    spec = spec or NtkSpec(cfg.L, cfg.s)
    G = gradients(cfg, init(cfg, seed), X)
    return float(np.max(np.abs(G @ G.T - ntk_gram(spec, X).entries)))


def check_ntk_convergence(L=1, s=1, d=5, widths=(64, 256, 1024, 4096), seeds=(0, 1, 2),
                          n_points=20, point_seed=12345):
    widths = [int(m) for m in widths]
    if any(m % 2 for m in widths):
        raise ValueError("widths must be even")
    X = unit_sphere(n_points, d, np.random.default_rng(point_seed))
    spec = NtkSpec(L, s)
    per_seed = [
        [max_kernel_error(NetConfig(L, m, s, d), seed, X, spec) for seed in seeds] for m in widths
    ]
    medians = [float(np.median(v)) for v in per_seed]
    return ConvergenceReport(L, s, d, widths, per_seed, medians)


# -- trained net vs kernel ridge regression -----------------------------------


@dataclass
class KrrReport:
    m: int
    seed: int
    n: int
    gap: float

    def passed(self, tol=TOLERANCES["krr_max_gap"]):
        return self.gap < tol


def check_krr_equivalence(m=2048, n=10, seed=0, L=1, s=1, d=10, lam=0.1, eta=1e-3, epochs=2000,
                          n_test=20, kind="h1"):
    """Train on n noiseless points and compare with NTK ridge regression at n_test fresh points.

    The training penalty is m * lam_train * ||W - W0||^2 on a net whose gradient
    features already carry the 1/sqrt(m) scale, so lam_train = lam / m makes the
    linearised net's ridge equal the kernel ridge ``lam``.
    """
    rng = np.random.default_rng(seed)
    model = make_synthetic_model(kind, d, rng, nu=0.0)
    X = unit_sphere(n, d, rng)
    Z = unit_sphere(n_test, d, rng)
    cfg = NetConfig(L, m, s, d)
    W0 = init(cfg, seed)
    spec = NtkSpec(L, s)
    if n == 0:
        f_nn = forward_batch(cfg, W0, Z)
        f_krr = np.zeros(n_test)
    else:
        y = np.asarray(reward(model, X), dtype=float)
        W = train(cfg, W0, (X, y), TrainSpec(lam / m, eta, epochs))
        f_nn = forward_batch(cfg, W, Z)
        f_krr = krr_predict(ntk_gram(spec, X), y, ntk_cross(spec, Z, X), lam)
    return KrrReport(m, seed, n, float(np.max(np.abs(f_nn - f_krr))))


# -- confidence coverage ------------------------------------------------------


@dataclass
class CoverageReport:
    n_test: int
    n_covered: int
    beta: float
    fraction: float = field(init=False)

    def __post_init__(self):
        if not 0 <= self.n_covered <= self.n_test:
            raise ValueError("covered count out of range")
        self.fraction = self.n_covered / self.n_test if self.n_test else 1.0

    def passed(self, tol=TOLERANCES["coverage_min"]):
        return self.fraction >= tol


def rkhs_reward(cfg, W0, anchors, S, rng):
    """theta = sum_j alpha_j g(z_j)/sqrt(m) scaled to norm S; h(x) = g(x) . theta / sqrt(m).

    The RKHS of the design kernel g.g'/m is exactly this linear class, and
    ||h|| = ||theta|| = S.
    """
    G = gradients(cfg, W0, anchors) / math.sqrt(cfg.m)
    theta = rng.standard_normal(len(anchors)) @ G
    theta *= S / np.linalg.norm(theta)

    def h(X):
        return gradients(cfg, W0, X) @ theta / math.sqrt(cfg.m)

    return h


def check_coverage(t=200, m=1024, d=5, L=1, s=1, S=4.0, nu=0.1, lam=0.1, delta=0.1, eta=1e-3,
                   epochs=200, n_test=200, n_anchors=20, seed=0, beta_scale=1.0):
    """Fraction of fresh points with |h(x) - f(x; W_t)| <= beta * sigma_hat(x).

    Contexts are drawn before any noise is seen, so the design is independent
    of the noise sequence.
    """
    rng = np.random.default_rng(seed)
    cfg = NetConfig(L, m, s, d)
    W0 = init(cfg, seed)
    h = rkhs_reward(cfg, W0, unit_sphere(n_anchors, d, rng), S, rng)
    X = unit_sphere(t, d, rng)
    Xt = unit_sphere(n_test, d, rng)
    y = h(X) + nu * rng.standard_normal(t)

    state = empty_design(cfg, W0, lam, capacity=t)
    feats = gradients(cfg, W0, X)
    for i in range(t):
        state = design_add(state, X[i], y[i], feature=feats[i])
    W = train(cfg, W0, (X, y), TrainSpec(lam, eta, epochs))
    sig = np.sqrt(posterior_variances(state, Xt))
    beta = beta_scale * beta_practical(ConfidenceParams(S, nu, lam, delta))
    covered = int(np.sum(np.abs(h(Xt) - forward_batch(cfg, W, Xt)) <= beta * sig))
    return CoverageReport(n_test, covered, float(beta))


# -- concentration of activation products ------------------------------------


def activation_moment(k, rho):
    """mu_{k, rho} = E[sigma_k(X) sigma_k(Y)] = dual_k(rho) / c_k."""
    return float(dual(k, rho)) / norm_const(k)


def upper_tail_bound(n, t, s, rho):
    mu4 = activation_moment(4 * s, rho)
    t_star = (math.sqrt(3 * mu4) / (4 * (1 + rho))) ** (2 - 1 / s) * n ** (-(s - 1) / (2 * s - 1))
    if t <= t_star:
        exponent = -n * t * t / (2 * math.sqrt(3 * mu4))
    else:
        exponent = -((n * t) ** (1 / s)) / (8 * (1 + rho))
    return min(1.0, (n + 1) * math.exp(exponent))


def lower_tail_bound(n, t, s, rho):
    return min(1.0, math.exp(-n * t * t / (2 * activation_moment(2 * s, rho))))


@dataclass
class ConcentrationReport:
    s: int
    rho: float
    n: int
    trials: int
    mu: float
    thresholds: list
    freq_lower: list
    freq_two_sided: list
    bound_lower: list
    bound_two_sided: list

    def _ok(self, freqs, bounds, slack):
        for f, b in zip(freqs, bounds):
            se = math.sqrt(max(b * (1 - b), 0.0) / self.trials)
            if f > b + slack * se:
                return False
        return True

    def passed(self, slack=TOLERANCES["concentration_se_slack"]):
        return self._ok(self.freq_lower, self.bound_lower, slack) and self._ok(
            self.freq_two_sided, self.bound_two_sided, slack
        )


def default_thresholds(n, s, rho):
    """Where the lower-tail bound equals 0.05 and 0.01, and where the upper one reaches 0.05."""
    mu2 = activation_moment(2 * s, rho)
    mu4 = activation_moment(4 * s, rho)
    lo = [math.sqrt(2 * mu2 * math.log(1 / p) / n) for p in (0.05, 0.01)]
    up = math.sqrt(2 * math.sqrt(3 * mu4) * math.log((n + 1) / 0.05) / n)
    return lo + [up]


def check_concentration(s=1, rho=0.0, n=1000, trials=5000, thresholds=None, seed=0,
                        batch=250):
    if s not in (1, 2) or not -1 < rho < 1 or n < 100:
        raise ValueError("need s in {1, 2}, rho in (-1, 1), n >= 100")
    mu = activation_moment(s, rho)
    thresholds = list(thresholds) if thresholds is not None else default_thresholds(n, s, rho)
    rng = np.random.default_rng(seed)
    b = math.sqrt(1 - rho * rho)
    means = np.empty(trials)
    for start in range(0, trials, batch):
        k = min(batch, trials - start)
        X = rng.standard_normal((k, n))
        Y = rho * X + b * rng.standard_normal((k, n))
        means[start : start + k] = np.mean(sigma(s, X) * sigma(s, Y), axis=1)
    dev = means - mu
    freq_lower = [float(np.mean(dev <= -t)) for t in thresholds]
    freq_two = [float(np.mean(np.abs(dev) >= t)) for t in thresholds]
    bound_lower = [lower_tail_bound(n, t, s, rho) for t in thresholds]
    bound_two = [min(1.0, upper_tail_bound(n, t, s, rho) + bl) for t, bl in zip(thresholds, bound_lower)]
    return ConcentrationReport(s, rho, n, trials, mu, thresholds, freq_lower, freq_two,
                               bound_lower, bound_two)


# -- dual activations -----------------------------------------------------------


@dataclass
class DualReport:
    quadrature_err: float
    derivative_err: float
    mc_z: float

    def passed(self):
        return (
            self.quadrature_err < TOLERANCES["dual_quadrature"]
            and self.derivative_err < TOLERANCES["dual_derivative"]
            and self.mc_z < TOLERANCES["dual_mc_z"]
        )


def check_dual(seed=0, mc_samples=DEFAULT_DUAL_CFG.mc_samples):
    """Closed form vs quadrature (s = 0, 1), the derivative identity (s = 2, 3) and Monte Carlo (s = 2)."""
    grid = np.linspace(-1.0, 1.0, 201)
    quad = max(
        float(np.max(np.abs(dual_closed_form(s, grid) - dual_quadrature(s, grid)))) for s in (0, 1)
    )
    inner = np.linspace(-0.95, 0.95, 39)
    deriv = max(dual_derivative_check(s, float(r)) for s in (2, 3) for r in inner)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for rho in (-0.5, 0.0, 0.7):
        est, se = dual_monte_carlo(2, rho, rng, mc_samples)
        worst = max(worst, abs(est - dual(2, rho)) / se)
    return DualReport(quad, deriv, worst)


# -- serialisation --------------------------------------------------------------


def report_rows(report):
    """Flatten a report into (metric, value) rows; lists are expanded with an index."""
    rows = []
    for key, value in asdict(report).items():
        if isinstance(value, list):
            for i, v in enumerate(value):
                if isinstance(v, list):
                    for j, w in enumerate(v):
                        rows.append((f"{key}[{i}][{j}]", w))
                else:
                    rows.append((f"{key}[{i}]", v))
        else:
            rows.append((key, value))
    rows.append(("passed", int(report.passed())))
    return rows


def to_csv(name, report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["check", "metric", "value"])
    for metric, value in report_rows(report):
        writer.writerow([name, metric, repr(value) if isinstance(value, float) else value])
    return buf.getvalue()
