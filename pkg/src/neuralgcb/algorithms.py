"""Bandit policies (NeuralGCB, NeuralUCB, LinUCB, uniform, oracle) and the episode runner."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bandit_env import Round
from .design import (
    ConfidenceParams,
    beta_neural_ucb,
    beta_practical,
    design_add,
    empty_design,
    logdet_ratio,
    mark_retrained,
    posterior_variances,
)
from .network import NetConfig, TrainSpec, forward_batch, gradients, init, train

__all__ = [
    "ucb_lcb",
    "argmax_lowest",
    "GcbConfig",
    "LevelState",
    "get_predictions",
    "NeuralGCB",
    "NeuralUCB",
    "LinUCB",
    "UniformRandom",
    "OraclePolicy",
    "PolicyTrace",
    "EpisodeError",
    "run_episode",
]

FIXED = "fixed"
ADAPTIVE = "adaptive"


def ucb_lcb(mean, sigma, beta):
    if np.any(np.asarray(sigma) < 0) or beta < 0:
        raise ValueError("sigma and beta must be non-negative")
    return mean + beta * sigma, mean - beta * sigma


def argmax_lowest(values, allowed=None):
    """Index of the maximum, ties to the lowest index, optionally restricted to ``allowed``."""
    values = np.asarray(values, dtype=float)
    if allowed is None:
        return int(np.argmax(values))
    allowed = np.sort(np.asarray(allowed, dtype=int))
    return int(allowed[np.argmax(values[allowed])])


def _schedule(q, R):
    """Per-level batch parameters; a scalar or a short list whose last entry repeats."""
    if np.isscalar(q):
        return [float(q)] * R
    q = [float(v) for v in q]
    if not q:
        raise ValueError("empty batch schedule")
    return (q + [q[-1]] * R)[:R]


@dataclass
class GcbConfig:
    T: int
    net: NetConfig
    train: TrainSpec
    confidence: ConfidenceParams
    sigma0: float = 1.0
    eta0: float = 0.2
    alpha0: float | None = None  # default 20 log T
    batch_mode: str = FIXED
    q: object = 1
    time_varying_beta: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.batch_mode not in (FIXED, ADAPTIVE):
            raise ValueError(f"unknown batch mode {self.batch_mode!r}")
        if self.alpha0 is None:
            self.alpha0 = 20.0 * math.log(self.T)
        self.q_levels = _schedule(self.q, self.R)
        for qr in self.q_levels:
            if self.batch_mode == FIXED and (qr < 1 or qr != int(qr)):
                raise ValueError("fixed batch sizes must be positive integers")
            if self.batch_mode == ADAPTIVE and qr <= 1:
                raise ValueError("adaptive batch parameters must exceed 1")

    @property
    def R(self):
        return max(1, math.ceil(math.log2(self.T)))


@dataclass
class LevelState:
    """One stratum: its design (gradients at W0), cached weights and counters."""

    design: object
    weights: object
    psi: list = field(default_factory=list)  # (t, label) pairs
    ctr: int = 0
    max_mu: int = 0
    retrains: int = 0


def _should_retrain(level, q, mode):
    if mode == FIXED:
        return len(level.psi) - level.design.fb >= q
    return logdet_ratio(level.design) > q


def _retrain(level, net, spec, W0):
    d = level.design
    level.weights = train(net, W0, (d.pts, d.Y), spec)
    level.design = mark_retrained(d)
    level.retrains += 1


def get_predictions(level, net, spec, W0, contexts, q, mode, features=None):
    """Means and standard deviations over ``contexts`` for one level, retraining if due.

    Variances use the level design (gradients at W0); means use the cached
    trained weights, refreshed when the batch condition fires.  Returns
    ``(means, sigmas, retrained)``; the level is updated in place.
    """
    feats = gradients(net, W0, contexts) if features is None else features
    sig = np.sqrt(posterior_variances(level.design, features=feats))
    retrained = False
    if len(level.psi) and _should_retrain(level, q, mode):
        _retrain(level, net, spec, W0)
        retrained = True
    means = forward_batch(net, level.weights, contexts)
    return means, sig, retrained


class NeuralGCB:
    """Algorithm NeuralGCB with R = ceil(log2 T) levels sharing one initialisation."""

    name = "neuralgcb"

    def __init__(self, cfg, seed):
        self.cfg = cfg
        self.W0 = init(cfg.net, seed)
        self.beta = beta_practical(cfg.confidence)
        lam = cfg.confidence.lam
        self.levels = [
            LevelState(empty_design(cfg.net, self.W0, lam), self.W0) for _ in range(cfg.R)
        ]
        self.retrain_log = []

    def _beta(self, level):
        if self.cfg.time_varying_beta:
            return beta_neural_ucb(self.cfg.confidence, level.design)
        return self.beta

    def _level(self, r):
        return self.levels[r - 1]

    def _predict(self, r, X, feats, t):
        lv = self._level(r)
        means, sig, retrained = get_predictions(
            lv, self.cfg.net, self.cfg.train, self.W0, X, self.cfg.q_levels[r - 1],
            self.cfg.batch_mode, features=feats,
        )
        if retrained:
            self.retrain_log.append((t, r))
        return means, sig

    def select(self, ctx, t):
        """Run the level loop for round t (1-based); returns (action, decision)."""
        cfg = self.cfg
        X = ctx.vectors
        feats = gradients(cfg.net, self.W0, X)
        active = np.arange(ctx.K)
        r = 1
        while True:
            lv = self._level(r)
            means, sig = self._predict(r, X, feats, t)
            beta = self._beta(lv)
            ucb, lcb = ucb_lcb(means, sig, beta)
            sig_max = float(np.max(sig[active]))
            lv.max_mu = argmax_lowest(means, active)
            threshold = cfg.sigma0 * 2.0 ** (-r)
            if sig_max <= threshold:
                a_ucb = argmax_lowest(ucb, active)
                if sig[a_ucb] <= cfg.eta0 / math.sqrt(t) or r == cfg.R:
                    # at r == R there is no deeper level; keep the sample at R
                    return a_ucb, (min(r + 1, cfg.R), 1, r, active)
                keep = active[ucb[active] >= np.max(lcb[active])]
                assert a_ucb in keep and len(keep) > 0
                active = keep
                r += 1
                continue
            if r == 1 or lv.ctr > cfg.alpha0 * 4.0**r:
                # any uncertain action is allowed; the most optimistic one costs least
                cand = active[sig[active] > threshold]
                a = argmax_lowest(ucb, cand)
                return a, (r, 2, r, active)
            a = self._level(r - 1).max_mu
            lv.ctr += 1
            return a, (r, 3, r, active)

    def update(self, ctx, action, y, decision, t):
        target, label, _, _ = decision
        lv = self._level(target)
        lv.design = design_add(lv.design, ctx.vectors[action], y)
        lv.psi.append((t, label))
        # evaluate the batch rule as soon as a level's data changes so the
        # schedule does not depend on when the level is next visited
        if _should_retrain(lv, self.cfg.q_levels[target - 1], self.cfg.batch_mode):
            _retrain(lv, self.cfg.net, self.cfg.train, self.W0)
            self.retrain_log.append((t, target))

    @property
    def retrains_total(self):
        return sum(lv.retrains for lv in self.levels)


class NeuralUCB:
    """Single-net UCB with beta_t = 2S + nu sqrt(logdet + 2 log(1/delta))."""

    name = "neuralucb"

    def __init__(self, net, train_spec, confidence, seed, batch_mode=FIXED, q=1):
        self.net = net
        self.spec = train_spec
        self.cp = confidence
        self.W0 = init(net, seed)
        self.level = LevelState(empty_design(net, self.W0, confidence.lam), self.W0)
        self.batch_mode = batch_mode
        self.q = float(q)
        self.retrain_log = []

    def select(self, ctx, t):
        means, sig, retrained = get_predictions(
            self.level, self.net, self.spec, self.W0, ctx.vectors, self.q, self.batch_mode
        )
        if retrained:
            self.retrain_log.append((t, 1))
        beta = beta_neural_ucb(self.cp, self.level.design)
        a = argmax_lowest(means + beta * sig)
        return a, (1, 0, 1, None)

    def update(self, ctx, action, y, decision, t):
        lv = self.level
        lv.design = design_add(lv.design, ctx.vectors[action], y)
        lv.psi.append((t, 0))
        if _should_retrain(lv, self.q, self.batch_mode):
            _retrain(lv, self.net, self.spec, self.W0)
            self.retrain_log.append((t, 1))

    @property
    def retrains_total(self):
        return self.level.retrains


class LinUCB:
    """Ridge regression on raw contexts with beta = 1 + sqrt(log(2TK/delta)/2)."""

    name = "linucb"

    def __init__(self, d, lam, T, K, delta=0.1, beta=None):
        self.A_inv = np.eye(d) / lam
        self.b = np.zeros(d)
        self.beta = 1.0 + math.sqrt(math.log(2 * T * K / delta) / 2) if beta is None else beta
        self.retrain_log = []

    def scores(self, X):
        theta = self.A_inv @ self.b
        width = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, self.A_inv, X), 0.0))
        return X @ theta + self.beta * width

    def select(self, ctx, t):
        return argmax_lowest(self.scores(ctx.vectors)), (1, 0, 1, None)

    def update(self, ctx, action, y, decision, t):
        x = ctx.vectors[action]
        Ax = self.A_inv @ x
        self.A_inv = self.A_inv - np.outer(Ax, Ax) / (1.0 + x @ Ax)
        self.b = self.b + y * x

    retrains_total = 0


class UniformRandom:
    name = "uniform"

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.retrain_log = []

    def select(self, ctx, t):
        return int(self.rng.integers(ctx.K)), (1, 0, 1, None)

    def update(self, ctx, action, y, decision, t):
        pass

    retrains_total = 0


class OraclePolicy:
    """Always plays the best mean action; needs the environment."""

    name = "oracle"

    def __init__(self, env):
        self.env = env
        self.retrain_log = []

    def select(self, ctx, t):
        return argmax_lowest(self.env.means(ctx)), (1, 0, 1, None)

    def update(self, ctx, action, y, decision, t):
        pass

    retrains_total = 0


@dataclass
class PolicyTrace:
    algorithm: str
    seed: int
    actions: list = field(default_factory=list)
    levels: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    regrets: list = field(default_factory=list)
    cumulative: list = field(default_factory=list)
    retrains: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    retrain_log: list = field(default_factory=list)
    level_summary: list = field(default_factory=list)

    @property
    def final_regret(self):
        return self.cumulative[-1] if self.cumulative else 0.0


class EpisodeError(RuntimeError):
    def __init__(self, t, exc):
        super().__init__(f"policy failed at round {t}: {exc}")
        self.t = t


def run_episode(policy, env, T, seed=0, clock=time.perf_counter):
    """Drive ``policy`` for T rounds on ``env``; regret uses noiseless means."""
    if T < 1:
        raise ValueError("T must be >= 1")
    trace = PolicyTrace(getattr(policy, "name", type(policy).__name__), seed)
    cum = 0.0
    for t in range(1, T + 1):
        start = clock()
        ctx = env.contexts(t - 1)
        try:
            action, decision = policy.select(ctx, t)
            y = env.observe(ctx, action)
            policy.update(ctx, action, y, decision, t)
        except Exception as exc:
            raise EpisodeError(t, exc) from exc
        means = env.means(ctx)
        rnd = Round(t, action, y, float(np.max(means) - means[action]))
        cum += rnd.regret
        trace.actions.append(action)
        trace.levels.append(decision[2])
        trace.labels.append(decision[1])
        trace.regrets.append(rnd.regret)
        trace.cumulative.append(cum)
        trace.retrains.append(int(policy.retrains_total))
        trace.wall_ms.append((clock() - start) * 1e3)
    trace.retrain_log = list(policy.retrain_log)
    if isinstance(policy, NeuralGCB):
        trace.level_summary = [
            {
                "level": r + 1,
                "n": len(lv.psi),
                "retrains": lv.retrains,
                "logdet": lv.design.logdet_now,
                "q": policy.cfg.q_levels[r],
                "ctr": lv.ctr,
            }
            for r, lv in enumerate(policy.levels)
        ]
    return trace
