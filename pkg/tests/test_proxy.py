import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import logit

from abfdr.model import AllocationPlan, HypothesisSpec, MetricPanel, MultinomialLiftModel
from abfdr.proxy import (
    DegenerateHypothesis,
    ProxyRow,
    a_coefficient,
    asymptotic_covariance,
    conditional_inversion,
    limiting_slope,
    proxy_logit,
    proxy_panel,
    proxy_probability,
    recover_b,
    theorem_form_prob,
)


def test_limiting_slope_cases():
    sup = HypothesisSpec(0, math.inf)
    # True alternative: +a^2/2.
    assert limiting_slope(0.1, 0.04, sup) == pytest.approx(0.5 * 0.25)
    # False alternative (theta below the interval): -a^2/2.
    assert limiting_slope(-0.1, 0.04, sup) == pytest.approx(-0.5 * 0.25)
    assert limiting_slope(0.0, 0.04, sup) == 0.0
    two = HypothesisSpec(-0.2, 0.3)
    assert limiting_slope(0.2, 0.01, two) == pytest.approx(0.5 * 1.0)  # nearer endpoint wins
    assert limiting_slope(0.5, 0.01, two) == pytest.approx(-0.5 * 4.0)
    assert a_coefficient(math.inf, 0.1, 1.0) == math.inf
    with pytest.raises(ValueError):
        a_coefficient(0.0, 0.1, 0.0)


def _degenerate():
    h = object.__new__(HypothesisSpec)
    object.__setattr__(h, "delta_L", -math.inf)
    object.__setattr__(h, "delta_U", math.inf)
    return h


def test_degenerate_hypothesis_rejected():
    with pytest.raises(DegenerateHypothesis):
        limiting_slope(0.1, 1.0, _degenerate())


@pytest.mark.parametrize("a_L,a_U", [(-0.3, math.inf), (-math.inf, 0.2), (-0.3, 0.5), (0.1, 0.6), (-0.7, -0.2)])
def test_b_recovery(a_L, a_U):
    rng = np.random.default_rng(0)
    for n in (1e2, 1e4, 1e6):
        r = math.sqrt(n)
        for _ in range(10):
            if math.isinf(a_U) or math.isinf(a_L):
                b = rng.normal()
                upper = True
            else:
                mode = -(a_U + a_L) * r / 2
                upper = bool(rng.random() < 0.5)
                b = mode + (1 if upper else -1) * rng.uniform(0.1, 2.0)
            p = theorem_form_prob(a_L, a_U, b, n)
            if not 1e-300 < p < 1 - 1e-15:
                continue
            got = recover_b(float(logit(p)), a_L, a_U, n, upper)
            assert got == pytest.approx(b, abs=1e-8)


def test_conditional_inversion_reproduces_covariance(psi30):
    cov = asymptotic_covariance(psi30.submodels[3], 1.0)
    rng = np.random.default_rng(1)
    x = conditional_inversion(rng.random((100_000, 5)), np.zeros(5), cov)
    sd = np.sqrt(np.diag(cov))
    emp = np.corrcoef(x.T)
    np.testing.assert_allclose(emp, cov / np.outer(sd, sd), atol=0.015)
    np.testing.assert_allclose(x.std(0), sd, rtol=0.01)
    # Component 0 is the plain normal quantile.
    u = np.full((1, 5), 0.975)
    assert conditional_inversion(u, np.zeros(5), cov)[0, 0] == pytest.approx(1.959963984540054 * sd[0])


def test_proxy_logit_matches_direct_probability():
    th = np.array([0.05, -0.02, 0.3])
    p = proxy_probability(th, 0.04, np.full(3, 0.0), np.array([np.inf, 0.1, 0.2]))
    np.testing.assert_allclose(proxy_logit(th, 0.04, np.full(3, 0.0), np.array([np.inf, 0.1, 0.2])), logit(p),
                               rtol=1e-10)
    # Stays finite far in the tail where the probability underflows 1 - p.
    assert np.isfinite(proxy_logit(np.array([5.0]), 0.01, 0.0, np.inf)).all()


def test_theorem_form_equals_proxy(psi30):
    """Proxy p at a fixed u equals Phi(a_U sqrt(n) + b) - Phi(a_L sqrt(n) + b) with b from the deviation."""
    panel = MetricPanel.superiority(5)
    row = ProxyRow(psi30.submodels[0], panel, 1.0, np.full(5, 0.3))
    a_L, a_U = row.a()
    for n in (1e3, 1e5):
        p = row.prob(n)
        for k in range(5):
            b = -row.z[k]  # theta_hat = theta + z sd  =>  shift -z
            assert theorem_form_prob(a_L[k], a_U[k], b, n) == pytest.approx(p[k], abs=1e-12)


def test_finite_difference_slope_converges(psi30):
    panel = MetricPanel.superiority(5)
    model = MultinomialLiftModel()
    errs = []
    for n in (1e5, 1e6, 1e7):
        worst = 0.0
        for sub in psi30.submodels:
            row = ProxyRow(sub, panel, 1.0, np.full(5, 0.5), model)
            h = n * 1e-3
            fd = (row.logit(n + h) - row.logit(n - h)) / (2 * h)
            for k, hk in enumerate(panel.hypotheses):
                s = limiting_slope(row.theta[k], row.avar[k], hk)
                if s != 0:
                    worst = max(worst, abs(fd[k] - s) / abs(s))
                    # At the median point the excess is 1/(2n) less a positive Mills-ratio term.
                    assert 0 < fd[k] - s < 1 / (2 * n)
        errs.append(worst)
    assert errs[0] > errs[1] > errs[2] and errs[2] < 0.005


def test_boundary_proxy_is_uniform(psi30):
    panel = MetricPanel.superiority(5)
    P = proxy_panel(psi30, panel, AllocationPlan(1.0, 10**6), 200, 4)
    boundary = P.probs[~P.truth]
    assert stats.kstest(boundary, "uniform").statistic < 0.05
    assert P.probs[P.truth].mean() > 0.99
