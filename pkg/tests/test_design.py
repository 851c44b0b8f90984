import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralgcb.design import (
    ConfidenceParams,
    DesignError,
    beta_neural_ucb,
    beta_practical,
    design_add,
    empty_design,
    logdet_ratio,
    mark_retrained,
    posterior_variance,
    posterior_variances,
)
from neuralgcb.network import NetConfig, gradients, init
from neuralgcb.ntk import info_gain


def unit(rng, n, d):
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def small(seed=0, L=1, m=8, s=1, d=4):
    cfg = NetConfig(L, m, s, d)
    return cfg, init(cfg, seed)


def primal_variance(cfg, W0, X, lam, x):
    # p x p oracle: Z = lam I + sum g g^T / m, sigma^2 = g^T Z^{-1} g / m
    G = gradients(cfg, W0, X) if len(X) else np.zeros((0, cfg.n_params))
    Z = lam * np.eye(cfg.n_params) + G.T @ G / cfg.m
    g = gradients(cfg, W0, x)[0]
    return float(g @ np.linalg.solve(Z, g) / cfg.m)


def build(cfg, W0, X, lam, y=None):
    st_ = empty_design(cfg, W0, lam)
    for i, x in enumerate(X):
        st_ = design_add(st_, x, 0.0 if y is None else y[i])
    return st_


def test_empty_design_variance():
    cfg, W0 = small()
    x = unit(np.random.default_rng(0), 1, 4)[0]
    g = gradients(cfg, W0, x)[0]
    st_ = empty_design(cfg, W0, 0.3)
    assert posterior_variance(st_, x) == pytest.approx(g @ g / (0.3 * cfg.m))
    assert len(st_) == 0 and st_.logdet_now == 0.0


def test_first_add_values():
    cfg, W0 = small()
    x = unit(np.random.default_rng(1), 1, 4)[0]
    g = gradients(cfg, W0, x)[0]
    st_ = design_add(empty_design(cfg, W0, 0.2), x, 1.5)
    np.testing.assert_allclose(st_.Khat, [[g @ g / cfg.m]])
    assert st_.logdet_now == pytest.approx(math.log(1 + (g @ g / cfg.m) / 0.2))
    np.testing.assert_array_equal(st_.Y, [1.5])
    np.testing.assert_array_equal(st_.pts, [x])


def test_repeat_point_reduces_variance():
    cfg, W0 = small()
    x = unit(np.random.default_rng(2), 1, 4)[0]
    s0 = empty_design(cfg, W0, 0.1)
    s1 = design_add(s0, x, 0.0)
    s2 = design_add(s1, x, 0.0)
    assert posterior_variance(s2, x) < posterior_variance(s1, x) < posterior_variance(s0, x)
    # two copies of one feature: sigma^2 = k / (lam + 2k)
    k = float(s1.Khat[0, 0])
    assert posterior_variance(s2, x) == pytest.approx(k / (0.1 + 2 * k), rel=1e-10)


def test_logdet_matches_info_gain():
    cfg, W0 = small(L=2, m=6, s=2)
    X = unit(np.random.default_rng(3), 15, 4)
    st_ = build(cfg, W0, X, 0.1)
    assert st_.logdet_now == pytest.approx(info_gain(st_.Khat, 0.1), abs=1e-8)


def test_cholesky_invariant():
    cfg, W0 = small(m=6)
    X = unit(np.random.default_rng(4), 12, 4)
    st_ = build(cfg, W0, X, 0.05)
    A = st_.Khat + 0.05 * np.eye(12)
    C = st_.chol
    assert np.linalg.norm(C @ C.T - A) / np.linalg.norm(A) < 1e-8
    assert len(st_.pts) == len(st_.Y) == st_.Khat.shape[0] == 12


@pytest.mark.parametrize("trial", range(10))
def test_woodbury_against_primal(trial):
    rng = np.random.default_rng(100 + trial)
    L, m, s = [(1, 8, 1), (2, 6, 2), (1, 16, 3)][trial % 3]
    cfg, W0 = small(trial, L, m, s, 4)
    assert cfg.n_params <= 200
    X = unit(rng, int(rng.integers(1, 31)), 4)
    st_ = build(cfg, W0, X, 0.1)
    for x in unit(rng, 5, 4):
        assert posterior_variance(st_, x) == pytest.approx(primal_variance(cfg, W0, X, 0.1, x), abs=1e-8)


def test_variance_monotone_under_adds():
    rng = np.random.default_rng(5)
    cfg, W0 = small()
    probes = unit(rng, 10, 4)
    st_ = empty_design(cfg, W0, 0.1)
    prev = posterior_variances(st_, probes)
    for x in unit(rng, 10, 4):
        st_ = design_add(st_, x, 0.0)
        cur = posterior_variances(st_, probes)
        assert np.all(cur <= prev + 1e-12)
        prev = cur


def test_value_semantics_and_branching():
    rng = np.random.default_rng(6)
    cfg, W0 = small()
    X = unit(rng, 4, 4)
    base = build(cfg, W0, X[:2], 0.1)
    snap = (base.Khat.copy(), base.chol.copy(), base.Y.copy(), base.logdet_now)
    a = design_add(base, X[2], 1.0)
    b = design_add(base, X[3], 2.0)  # second child of the same parent
    np.testing.assert_array_equal(base.Khat, snap[0])
    np.testing.assert_array_equal(base.chol, snap[1])
    np.testing.assert_array_equal(base.Y, snap[2])
    assert base.logdet_now == snap[3] and len(base) == 2
    np.testing.assert_array_equal(a.pts[-1], X[2])
    np.testing.assert_array_equal(b.pts[-1], X[3])
    np.testing.assert_array_equal(a.Y, [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(b.Y, [0.0, 0.0, 2.0])


def test_replay_is_bitwise_identical():
    rng = np.random.default_rng(7)
    cfg, W0 = small()
    X = unit(rng, 70, 4)  # crosses the initial capacity of 64
    a = build(cfg, W0, X, 0.1, y=np.arange(70.0))
    b = build(cfg, W0, X, 0.1, y=np.arange(70.0))
    np.testing.assert_array_equal(a.Khat, b.Khat)
    np.testing.assert_array_equal(a.chol, b.chol)
    assert a.logdet_now == b.logdet_now


def test_logdet_ratio_and_mark():
    rng = np.random.default_rng(8)
    cfg, W0 = small()
    X = unit(rng, 3, 4)
    st_ = build(cfg, W0, X[:2], 0.1)
    marked = mark_retrained(st_)
    assert logdet_ratio(marked) == 1.0
    assert marked.fb == 2
    again = mark_retrained(marked)
    assert again.fb == marked.fb and again.logdet_fb == marked.logdet_fb
    pre = posterior_variance(marked, X[2])
    after = design_add(marked, X[2], 0.0)
    # determinant lemma: one add multiplies det by 1 + sigma^2_pre(x)
    assert logdet_ratio(after) == pytest.approx(1 + pre, rel=1e-10)
    assert after.logdet_now >= after.logdet_fb >= 0


def test_schur_failure_raises():
    cfg, W0 = small()
    x = unit(np.random.default_rng(9), 1, 4)[0]
    st_ = design_add(empty_design(cfg, W0, 1e-300), x, 0.0)
    with pytest.raises(DesignError):
        design_add(st_, x, 0.0)


def test_empty_design_rejects_bad_lambda():
    cfg, W0 = small()
    with pytest.raises(ValueError):
        empty_design(cfg, W0, 0.0)


def test_confidence_params_validation():
    with pytest.raises(ValueError):
        ConfidenceParams(0, 0.1, 0.1, 0.1)
    with pytest.raises(ValueError):
        ConfidenceParams(1, 0.1, 0.1, 1.0)
    with pytest.raises(ValueError):
        ConfidenceParams(1, -0.1, 0.1, 0.5)


def test_beta_practical_examples():
    assert beta_practical(ConfidenceParams(1, 0.0, 1, 0.5)) == 2.0
    assert beta_practical(ConfidenceParams(1, 0.1, 0.1, 0.1)) == pytest.approx(
        2 + 0.1 * math.sqrt(20 * math.log(10)), abs=1e-12
    )
    assert beta_practical(ConfidenceParams(1, 0.1, 0.1, 0.1)) == pytest.approx(2.6787, abs=1e-4)
    assert beta_practical(ConfidenceParams(3, 0.1, 0.1, 1 - 1e-12)) == pytest.approx(6.0, abs=1e-5)


def test_beta_neural_ucb_examples():
    cp = ConfidenceParams(1, 0.1, 0.1, 0.1)
    assert beta_neural_ucb(cp, logdet=3.0) == pytest.approx(2.27577, abs=1e-5)
    cfg, W0 = small()
    st_ = empty_design(cfg, W0, 0.1)
    assert beta_neural_ucb(cp, st_) == pytest.approx(2 + 0.1 * math.sqrt(2 * math.log(10)))
    vals = []
    for x in unit(np.random.default_rng(10), 8, 4):
        st_ = design_add(st_, x, 0.0)
        vals.append(beta_neural_ucb(cp, st_))
    assert np.all(np.diff(vals) >= 0)


@given(st.integers(0, 10_000), st.integers(1, 20), st.floats(0.01, 2.0))
@settings(max_examples=30, deadline=None)
def test_ratio_at_least_one_and_telescoping(seed, n, lam):
    rng = np.random.default_rng(seed)
    cfg, W0 = small(seed % 5)
    st_ = empty_design(cfg, W0, lam)
    total = 0.0
    for x in unit(rng, n, 4):
        total += math.log1p(posterior_variance(st_, x))
        st_ = design_add(st_, x, 0.0)
        assert logdet_ratio(st_) >= 1.0
    assert st_.logdet_now == pytest.approx(total, abs=1e-8)


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_variance_within_prior_bounds(seed):
    rng = np.random.default_rng(seed)
    cfg, W0 = small()
    st_ = build(cfg, W0, unit(rng, 6, 4), 0.1)
    probes = unit(rng, 5, 4)
    prior = posterior_variances(empty_design(cfg, W0, 0.1), probes)
    v = posterior_variances(st_, probes)
    assert np.all(v >= 0) and np.all(v <= prior + 1e-15)
