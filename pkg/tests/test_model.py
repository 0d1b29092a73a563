import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abfdr.model import (
    OPTIMIZELY_MEMBERSHIP,
    AllocationPlan,
    ConsistencyError,
    HypothesisSpec,
    IndependentBinomialLiftModel,
    MetricPanel,
    MultinomialLiftModel,
    PsiMixture,
    Submodel,
    ValidationError,
    check_nontrivial,
    lift,
    marginals_from_eta,
    split_allocation,
    total_from_group_a,
)


def test_membership_structure():
    M = OPTIMIZELY_MEMBERSHIP
    assert M.shape == (5, 13)
    # Cell 1 is "no outcome"; cell 13 has every outcome.
    assert M[:, 0].sum() == 0 and M[:, 12].sum() == 5
    # Downstream outcomes imply upstream ones.
    assert np.all(M[0] >= M[1]) and np.all(M[0] >= M[2]) and np.all(M[3] >= M[4])
    with pytest.raises(ValueError):
        M[0, 0] = 1


def test_uniform_eta_marginals():
    eta = np.full(13, 1 / 13)
    np.testing.assert_allclose(marginals_from_eta(eta), np.array([12, 6, 6, 8, 4]) / 13)


def test_eta_validation():
    with pytest.raises(ValidationError):
        marginals_from_eta(np.full(13, 0.1))
    with pytest.raises(ValidationError):
        marginals_from_eta(np.r_[-0.1, 1.1, np.zeros(11)])
    with pytest.raises(ValidationError):
        marginals_from_eta(np.full(12, 1 / 12))


def test_lift_values():
    assert lift(0.2, 0.22) == pytest.approx(0.1)
    np.testing.assert_allclose(lift([0.5, 0.1], [0.5, 0.05]), [0.0, -0.5])
    with pytest.raises(ZeroDivisionError):
        lift(0.0, 0.1)


def test_hypothesis_spec():
    h = HypothesisSpec(0, "inf")
    assert h.delta_U == math.inf
    assert h.contains(0.1) and not h.contains(0.0) and not h.contains(1e-12) and not h.contains(-0.1)
    with pytest.raises(ValidationError):
        HypothesisSpec(1, 0)
    with pytest.raises(ValidationError):
        HypothesisSpec("-inf", "inf")
    with pytest.raises(ValidationError):
        HypothesisSpec(float("nan"), 1)
    assert MetricPanel.superiority(3).K == 3


@pytest.mark.parametrize("c,n,expected", [(1, 8, (4, 4)), (1, 7, (4, 3)), (2, 9, (6, 3)), (0.5, 9, (3, 6)),
                                          (1, 26656, (13328, 13328))])
def test_split_allocation_examples(c, n, expected):
    assert split_allocation(AllocationPlan(c, n)) == expected


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 10), st.integers(2, 10**6))
def test_split_allocation_properties(c, n):
    n_A, n_B = split_allocation(AllocationPlan(c, n))
    assert n_A + n_B == n and n_A >= 1 and n_B >= 1
    # No other split is closer to the ratio.
    best = min(abs((n - b) - c * b) for b in range(max(1, n_B - 3), min(n - 1, n_B + 3) + 1))
    assert abs(n_A - c * n_B) <= best + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10**6))
def test_total_from_group_a_equal_allocation(n_A):
    n = total_from_group_a(n_A, 1.0)
    assert n == 2 * n_A and split_allocation(AllocationPlan(1.0, n)) == (n_A, n_A)


def test_allocation_rejects_bad_input():
    with pytest.raises(ValidationError):
        AllocationPlan(0, 10)
    with pytest.raises(ValidationError):
        AllocationPlan(1, 1)


def test_truth_flags_and_mislabel(psi30, superiority5):
    model = MultinomialLiftModel()
    for s in psi30.submodels:
        flags = model.truth_flags(s, superiority5)
        assert set(np.flatnonzero(~flags)) == set(s.false_set)
    s = psi30.submodels[0]
    bad = Submodel(s.params_A, s.params_B, frozenset({1}))
    with pytest.raises(ConsistencyError):
        model.truth_flags(bad, superiority5)


def test_psi_mixture(psi30):
    assert len(psi30) == 30
    np.testing.assert_allclose(psi30.weights, 1 / 30)
    sizes = [len(s.false_set) for s in psi30.submodels]
    assert [sizes.count(k) for k in (1, 2, 3, 4)] == [5, 10, 10, 5]
    assert len(psi30.restrict([1])) == 5
    with pytest.raises(ValidationError):
        psi30.restrict([5])
    trivial = PsiMixture((Submodel(psi30.submodels[0].params_A, psi30.submodels[0].params_A, frozenset(range(5))),))
    with pytest.raises(ValidationError):
        check_nontrivial(trivial, 5)


def test_marginal_variances_agree_across_families(psi30):
    # Each marginal is binomial under both families, so the diagonals match.
    for s in psi30.submodels[:6]:
        for c in (0.5, 1.0, 3.0):
            vm = np.diag(MultinomialLiftModel().asymptotic_covariance(s, c))
            vi = np.diag(IndependentBinomialLiftModel().asymptotic_covariance(s, c))
            np.testing.assert_allclose(vm, vi, rtol=1e-12)


def test_asymptotic_covariance_matches_simulated_mle(psi30):
    """Empirical covariance of sqrt(n) * (theta_hat - theta) against the delta method."""
    s = psi30.submodels[12]
    model = MultinomialLiftModel()
    c, n = 1.0, 40000
    n_A, n_B = split_allocation(AllocationPlan(c, n))
    rng = np.random.default_rng(3)
    reps = 20000
    pa = rng.multinomial(n_A, s.params_A, size=reps) @ OPTIMIZELY_MEMBERSHIP.T / n_A
    pb = rng.multinomial(n_B, s.params_B, size=reps) @ OPTIMIZELY_MEMBERSHIP.T / n_B
    th = (pb - pa) / pa
    emp = np.cov(th.T) * n
    ref = model.asymptotic_covariance(s, c)
    sd = np.sqrt(np.diag(ref))
    # Correlation-scale tolerance; MC error of a covariance at 2e4 reps is ~1%.
    assert np.abs((emp - ref) / np.outer(sd, sd)).max() < 0.04
