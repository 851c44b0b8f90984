import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralgcb.algorithms import (
    EpisodeError,
    GcbConfig,
    LinUCB,
    NeuralGCB,
    NeuralUCB,
    OraclePolicy,
    UniformRandom,
    _schedule,
    argmax_lowest,
    run_episode,
    ucb_lcb,
)
from neuralgcb.bandit_env import ContextSet, SyntheticEnv, make_synthetic_model
from neuralgcb.design import ConfidenceParams
from neuralgcb.network import NetConfig, TrainSpec

D, K = 4, 3


def _env(seed=0, kind="h1"):
    model = make_synthetic_model(kind, D, np.random.default_rng(100 + seed), nu=0.1)
    return SyntheticEnv(model, D, K, seed)


def _gcb_cfg(T=60, **kw):
    kw.setdefault("sigma0", 0.6)
    return GcbConfig(
        T, NetConfig(1, 8, 1, D), TrainSpec(0.1, 1e-3, 20), ConfidenceParams(1.0, 0.1, 0.1, 0.1), **kw
    )


def test_ucb_lcb():
    u, l = ucb_lcb(np.array([1.0, 2.0]), np.array([0.5, 0.0]), 2.0)
    np.testing.assert_allclose(u, [2.0, 2.0])
    np.testing.assert_allclose(l, [0.0, 2.0])
    with pytest.raises(ValueError):
        ucb_lcb(np.zeros(2), np.array([-1.0, 0.0]), 1.0)
    with pytest.raises(ValueError):
        ucb_lcb(np.zeros(2), np.zeros(2), -1.0)


def test_argmax_lowest_ties_and_restriction():
    assert argmax_lowest([1.0, 3.0, 3.0]) == 1
    assert argmax_lowest([5.0, 3.0, 3.0, 1.0], allowed=[1, 2, 3]) == 1
    assert argmax_lowest([5.0, 3.0, 4.0], allowed=np.array([2, 1])) == 2


def test_schedule():
    assert _schedule(3, 4) == [3.0] * 4
    assert _schedule([1, 2], 4) == [1.0, 2.0, 2.0, 2.0]
    assert _schedule([1, 2, 3, 4, 5], 2) == [1.0, 2.0]
    with pytest.raises(ValueError):
        _schedule([], 3)


def test_gcb_config_defaults_and_validation():
    cfg = _gcb_cfg(T=1000)
    assert cfg.R == 10
    assert cfg.alpha0 == pytest.approx(20 * math.log(1000))
    assert _gcb_cfg(T=1).R == 1
    with pytest.raises(ValueError):
        _gcb_cfg(batch_mode="sometimes")
    with pytest.raises(ValueError):
        _gcb_cfg(q=1.5)
    with pytest.raises(ValueError):
        _gcb_cfg(batch_mode="adaptive", q=1.0)
    with pytest.raises(ValueError):
        _gcb_cfg(T=0)


def _run_gcb(T=60, seed=0, **kw):
    cfg = _gcb_cfg(T, **kw)
    pol = NeuralGCB(cfg, seed)
    return pol, run_episode(pol, _env(seed), T, seed)


def test_gcb_first_round_explores_at_level_one():
    pol, tr = _run_gcb(T=5)
    assert tr.labels[0] == 2 and tr.levels[0] == 1


def test_gcb_trace_invariants():
    pol, tr = _run_gcb(T=80, alpha0=0.5)
    assert len(tr.cumulative) == 80
    assert set(tr.labels) <= {1, 2, 3}
    assert np.all(np.diff(tr.cumulative) >= -1e-12)
    assert np.all(np.diff(tr.retrains) >= 0)
    assert sum(s["n"] for s in tr.level_summary) == 80
    for r, lv in enumerate(pol.levels, start=1):
        # a type-3 round is only taken while the counter is within budget
        assert lv.ctr <= math.floor(pol.cfg.alpha0 * 4.0**r) + 1
        assert lv.ctr == sum(1 for lab, lev in zip(tr.labels, tr.levels) if lab == 3 and lev == r)
        assert all(1 <= lev <= pol.cfg.R for lev in tr.levels)


def test_gcb_fixed_batch_retrain_count():
    for q in (1, 3, [2, 5]):
        pol, tr = _run_gcb(T=50, q=q)
        for s in tr.level_summary:
            assert s["retrains"] == math.floor(s["n"] / s["q"])
        assert tr.retrains[-1] == sum(s["retrains"] for s in tr.level_summary)


def test_gcb_adaptive_retrain_bound():
    pol, tr = _run_gcb(T=50, batch_mode="adaptive", q=2.0)
    for s in tr.level_summary:
        assert s["retrains"] <= s["logdet"] / math.log(2) + 1


def test_gcb_deterministic():
    _, a = _run_gcb(T=40, seed=3)
    _, b = _run_gcb(T=40, seed=3)
    assert a.actions == b.actions and a.cumulative == b.cumulative
    assert a.retrain_log == b.retrain_log


def test_gcb_type3_plays_previous_level_argmax():
    pol = NeuralGCB(_gcb_cfg(T=64), 0)
    env = _env(0)
    for t in range(1, 65):
        ctx = env.contexts(t - 1)
        a, dec = pol.select(ctx, t)
        if dec[1] == 3:
            assert a == pol.levels[dec[0] - 2].max_mu
        pol.update(ctx, a, env.observe(ctx, a), dec, t)


def test_gcb_confident_round_goes_one_level_deeper():
    pol, tr = _run_gcb(T=120, alpha0=0.05)
    log = list(zip(tr.labels, tr.levels))
    assert any(lab != 2 for lab, _ in log)


def test_neural_ucb_runs_and_retrains_every_round():
    net = NetConfig(1, 8, 1, D)
    pol = NeuralUCB(net, TrainSpec(0.1, 1e-3, 10), ConfidenceParams(1.0, 0.1, 0.1, 0.1), seed=0)
    tr = run_episode(pol, _env(0), 20, 0)
    assert tr.retrains[-1] == 20
    pol2 = NeuralUCB(net, TrainSpec(0.1, 1e-3, 10), ConfidenceParams(1.0, 0.1, 0.1, 0.1), 0, q=4)
    assert run_episode(pol2, _env(0), 20, 0).retrains[-1] == 5


def test_linucb_matches_dense_oracle():
    rng = np.random.default_rng(0)
    lam, beta = 0.5, 1.3
    pol = LinUCB(D, lam, 100, K, beta=beta)
    A, b = lam * np.eye(D), np.zeros(D)
    for t in range(30):
        X = rng.standard_normal((K, D))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        Ai = np.linalg.inv(A)
        theta = Ai @ b
        expect = X @ theta + beta * np.sqrt(np.einsum("ij,jk,ik->i", X, Ai, X))
        np.testing.assert_allclose(pol.scores(X), expect, rtol=1e-9, atol=1e-12)
        ctx = ContextSet(X, t)
        a, dec = pol.select(ctx, t + 1)
        assert a == int(np.argmax(expect))
        y = float(rng.standard_normal())
        pol.update(ctx, a, y, dec, t + 1)
        A += np.outer(X[a], X[a])
        b += y * X[a]


def test_linucb_default_beta():
    pol = LinUCB(D, 1.0, 1000, 4, delta=0.1)
    assert pol.beta == pytest.approx(1 + math.sqrt(math.log(80000) / 2))


def test_oracle_has_zero_regret_and_uniform_positive():
    env = _env(1)
    assert run_episode(OraclePolicy(env), env, 50).final_regret == 0.0
    assert run_episode(UniformRandom(0), _env(1), 50).final_regret > 0.0


def test_uniform_random_reproducible():
    a = run_episode(UniformRandom(4), _env(2), 30, 4).actions
    assert a == run_episode(UniformRandom(4), _env(2), 30, 4).actions


def test_run_episode_wraps_policy_errors():
    class Broken(UniformRandom):
        def update(self, ctx, action, y, decision, t):
            if t == 3:
                raise RuntimeError("boom")

    with pytest.raises(EpisodeError) as info:
        run_episode(Broken(0), _env(0), 10)
    assert info.value.t == 3
    with pytest.raises(ValueError):
        run_episode(UniformRandom(0), _env(0), 0)


def test_run_episode_clock_injection():
    ticks = iter(range(1000))
    tr = run_episode(UniformRandom(0), _env(0), 5, clock=lambda: next(ticks))
    assert tr.wall_ms == [1000.0] * 5


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.data())
@settings(max_examples=50, deadline=None)
def test_argmax_lowest_property(values, data):
    idx = data.draw(st.lists(st.integers(0, len(values) - 1), min_size=1, unique=True))
    a = argmax_lowest(values, idx)
    assert a in idx
    assert values[a] == max(values[i] for i in idx)
    assert a == min(i for i in idx if values[i] == values[a])


@given(st.integers(0, 50), st.floats(0.0, 3.0))
@settings(max_examples=30, deadline=None)
def test_ucb_brackets_mean(seed, beta):
    rng = np.random.default_rng(seed)
    mean, sig = rng.standard_normal(5), np.abs(rng.standard_normal(5))
    u, l = ucb_lcb(mean, sig, beta)
    assert np.all(l <= mean + 1e-12) and np.all(mean <= u + 1e-12)


@pytest.mark.parametrize("shift", [-3.0, 0.5, 10.0])
def test_gcb_selection_invariant_to_mean_shift(monkeypatch, shift):
    from neuralgcb import algorithms

    base = run_episode(NeuralGCB(_gcb_cfg(T=40), 1), _env(1), 40, 1)
    original = algorithms.forward_batch
    monkeypatch.setattr(algorithms, "forward_batch", lambda *a: original(*a) + shift)
    moved = run_episode(NeuralGCB(_gcb_cfg(T=40), 1), _env(1), 40, 1)
    assert moved.actions == base.actions
    assert moved.labels == base.labels and moved.levels == base.levels
