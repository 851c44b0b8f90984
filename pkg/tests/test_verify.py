import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from neuralgcb import verify
from neuralgcb.network import NetConfig, gradients, init


def test_unit_sphere():
    X = verify.unit_sphere(7, 4, np.random.default_rng(0))
    assert X.shape == (7, 4)
    np.testing.assert_allclose(np.linalg.norm(X, axis=1), 1.0)


def test_small_ntk_convergence_report():
    rep = verify.check_ntk_convergence(widths=(16, 256), seeds=(0, 1), n_points=6)
    assert len(rep.per_seed) == 2 and len(rep.per_seed[0]) == 2
    assert rep.medians[1] < rep.medians[0]
    assert rep.strictly_decreasing


def test_convergence_report_validation():
    with pytest.raises(ValueError):
        verify.ConvergenceReport(1, 1, 5, [64, 64], [[1.0], [1.0]], [1.0, 1.0])
    with pytest.raises(ValueError):
        verify.check_ntk_convergence(widths=(63,))
    rep = verify.ConvergenceReport(1, 1, 5, [64, 128], [[0.3], [0.2]], [0.3, 0.2])
    assert not rep.passed(tol=0.1) and rep.passed(tol=0.25)


def test_krr_untrained_net_is_zero_predictor():
    rep = verify.check_krr_equivalence(m=64, n=0, epochs=1, n_test=5)
    assert rep.gap == pytest.approx(0.0, abs=1e-9)


def test_krr_gap_small_at_moderate_width():
    rep = verify.check_krr_equivalence(m=512, n=5, epochs=600, n_test=8)
    assert rep.gap < 0.3


def test_rkhs_reward_has_requested_norm():
    cfg = NetConfig(1, 32, 1, 3)
    W0 = init(cfg, 0)
    rng = np.random.default_rng(1)
    anchors = verify.unit_sphere(5, 3, rng)
    h = verify.rkhs_reward(cfg, W0, anchors, 2.0, np.random.default_rng(2))
    G = gradients(cfg, W0, anchors) / math.sqrt(cfg.m)
    K = G @ G.T
    # theta = c G^T alpha, so h(anchors) = c K alpha and ||theta||^2 = h^T K^-1 h
    v = h(anchors)
    assert v @ np.linalg.solve(K, v) == pytest.approx(4.0, rel=1e-6)
    X = verify.unit_sphere(4, 3, rng)
    Gx = gradients(cfg, W0, X) / math.sqrt(cfg.m)
    np.testing.assert_allclose(h(X), Gx @ G.T @ np.linalg.solve(K, v), atol=1e-9)


def test_coverage_report_fields():
    with pytest.raises(ValueError):
        verify.CoverageReport(10, 11, 1.0)
    rep = verify.CoverageReport(10, 9, 1.0)
    assert rep.fraction == 0.9 and rep.passed()
    assert verify.CoverageReport(0, 0, 1.0).fraction == 1.0


def test_coverage_small_run_and_non_vacuity():
    kw = dict(t=60, m=128, n_test=60, epochs=100)
    full = verify.check_coverage(**kw)
    assert full.fraction >= 0.85
    # the band is not trivially wide: shrinking beta enough loses coverage
    tiny = verify.check_coverage(beta_scale=0.01, **kw)
    assert tiny.fraction < full.fraction
    assert tiny.beta == pytest.approx(0.01 * full.beta)


def test_activation_moment_against_integration():
    # E[relu(X) relu(Y)] for rho = 0 is (E relu)^2 = 1 / (2 pi)
    assert verify.activation_moment(1, 0.0) == pytest.approx(1 / (2 * math.pi), rel=1e-10)
    # E[relu(X)^4] at rho = 1 equals E[X^4 1{X>0}] = 3/2
    assert verify.activation_moment(2, 1.0) == pytest.approx(1.5, rel=1e-10)
    val, _ = integrate.dblquad(
        lambda y, x: max(x, 0) ** 2 * max(0.5 * x + math.sqrt(0.75) * y, 0) ** 2
        * stats.norm.pdf(x) * stats.norm.pdf(y),
        -8, 8, -8, 8,
    )
    assert verify.activation_moment(2, 0.5) == pytest.approx(val, rel=1e-6)


def test_tail_bounds_shape():
    n, s, rho = 1000, 1, 0.0
    assert verify.lower_tail_bound(n, 0.0, s, rho) == 1.0
    ts = np.linspace(0.01, 0.5, 30)
    lo = [verify.lower_tail_bound(n, t, s, rho) for t in ts]
    up = [verify.upper_tail_bound(n, t, s, rho) for t in ts]
    assert np.all(np.diff(lo) <= 0) and np.all(np.diff(up) <= 0)
    mu2 = verify.activation_moment(2, 0.0)
    assert verify.lower_tail_bound(n, 0.05, 1, 0.0) == pytest.approx(math.exp(-n * 0.0025 / (2 * mu2)))


def test_default_thresholds_hit_targets():
    n, s, rho = 1000, 1, 0.0
    t1, t2, t3 = verify.default_thresholds(n, s, rho)
    assert verify.lower_tail_bound(n, t1, s, rho) == pytest.approx(0.05)
    assert verify.lower_tail_bound(n, t2, s, rho) == pytest.approx(0.01)
    assert verify.upper_tail_bound(n, t3, s, rho) == pytest.approx(0.05)


def test_concentration_small_run_passes():
    rep = verify.check_concentration(n=200, trials=500, seed=3)
    assert rep.passed()
    assert rep.mu == pytest.approx(1 / (2 * math.pi))
    assert all(f2 >= fl for f2, fl in zip(rep.freq_two_sided, rep.freq_lower))


def test_concentration_detects_violation():
    rep = verify.check_concentration(n=200, trials=200)
    rep.freq_lower = [1.0] * len(rep.freq_lower)
    assert not rep.passed()


def test_concentration_validation():
    with pytest.raises(ValueError):
        verify.check_concentration(s=3)
    with pytest.raises(ValueError):
        verify.check_concentration(rho=1.0)
    with pytest.raises(ValueError):
        verify.check_concentration(n=10)


def test_dual_check_small():
    rep = verify.check_dual(mc_samples=20000)
    assert rep.quadrature_err < 1e-10 and rep.derivative_err < 1e-6
    assert rep.passed() == (rep.mc_z < 4.0)


def test_report_csv_roundtrip():
    rep = verify.ConvergenceReport(1, 1, 5, [64, 128], [[0.3, 0.4], [0.2, 0.1]], [0.35, 0.15])
    text = verify.to_csv("ntk", rep)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["check", "metric", "value"]
    body = {r[1]: r[2] for r in rows[1:]}
    assert body["per_seed[1][0]"] == "0.2"
    assert body["medians[1]"] == "0.15"
    assert body["passed"] == "0"
    assert all(r[0] == "ntk" for r in rows[1:])


@given(st.floats(0.001, 1.0), st.integers(100, 5000))
@settings(max_examples=40, deadline=None)
def test_bounds_are_probabilities(t, n):
    for b in (verify.lower_tail_bound(n, t, 1, 0.0), verify.upper_tail_bound(n, t, 1, 0.0)):
        assert 0.0 <= b <= 1.0
