import numpy as np
import pytest

from abfdr import rng as rngmod
from abfdr import simulate
from abfdr.model import AllocationPlan, PsiMixture, ValidationError
from abfdr.posterior import PosteriorConfig
from abfdr.simulate import ProbPanel, build_panel, build_panel_independent

EXACT = PosteriorConfig(method="exact")


def test_streams_are_keyed():
    a = rngmod.stream(7, 0, 1, 2).random(4)
    assert np.array_equal(a, rngmod.stream(7, 0, 1, 2).random(4))
    for other in [(8, 0, 1, 2), (7, 1, 1, 2), (7, 0, 2, 2), (7, 0, 1, 3)]:
        assert not np.array_equal(a, rngmod.stream(*other).random(4))


@pytest.mark.parametrize("cfg", [EXACT, PosteriorConfig(draws=200)])
def test_panel_identical_across_worker_counts(psi30, superiority5, cfg):
    psi = psi30.restrict([1, 2])
    plan = AllocationPlan(1.0, 4000)
    p1 = build_panel(psi, superiority5, plan, cfg, 6, 11, workers=1)
    p8 = build_panel(psi, superiority5, plan, cfg, 6, 11, workers=8)
    assert p1.probs.tobytes() == p8.probs.tobytes()
    assert np.array_equal(p1.submodel_index, p8.submodel_index)


def test_panel_layout_and_truth(psi30, superiority5):
    P = build_panel(psi30, superiority5, AllocationPlan(1.0, 2000), EXACT, 3, 0)
    assert P.probs.shape == (90, 5) and P.n == 2000
    assert np.array_equal(P.submodel_index, np.repeat(np.arange(30), 3))
    for r in range(P.m):
        s = psi30.submodels[P.submodel_index[r]]
        assert set(np.flatnonzero(~P.truth[r])) == set(s.false_set)
    assert np.all((P.probs > 0) & (P.probs < 1))
    np.testing.assert_allclose(P.weights, 1.0)
    assert P.seed_record["seed"] == 0 and P.seed_record["phase"] == rngmod.PHASE_N0


def test_phases_give_independent_panels(psi30, superiority5):
    psi = psi30.restrict([1])
    a = build_panel(psi, superiority5, AllocationPlan(1.0, 2000), EXACT, 4, 3, phase=rngmod.PHASE_N0)
    b = build_panel(psi, superiority5, AllocationPlan(1.0, 2000), EXACT, 4, 3, phase=rngmod.PHASE_N1)
    assert not np.array_equal(a.probs, b.probs)


def test_weights_follow_mixture(psi30, superiority5):
    subs = psi30.submodels[:2]
    psi = PsiMixture(subs, np.array([3.0, 1.0]))
    P = build_panel(psi, superiority5, AllocationPlan(1.0, 1000), EXACT, 2, 0)
    np.testing.assert_allclose(P.weights, [1.5, 1.5, 0.5, 0.5])


def test_true_alternatives_gain_probability_with_n(psi30, superiority5):
    psi = psi30.restrict([1])
    lo = build_panel(psi, superiority5, AllocationPlan(1.0, 2000), EXACT, 40, 5)
    hi = build_panel(psi, superiority5, AllocationPlan(1.0, 80000), EXACT, 40, 5)
    assert hi.probs[hi.truth].mean() > lo.probs[lo.truth].mean() + 0.1
    # Boundary metrics stay roughly uniform.
    assert abs(hi.probs[~hi.truth].mean() - 0.5) < 0.15


def test_independent_family(psi30, superiority5):
    P = build_panel_independent(psi30.restrict([1]), superiority5, AllocationPlan(1.0, 3000), EXACT, 3, 1)
    assert P.seed_record["model"] == "independent" and P.probs.shape == (15, 5)


def test_simulation_counter(psi30, superiority5):
    before = simulate.SIMULATION_COUNT
    build_panel(psi30.restrict([4]), superiority5, AllocationPlan(1.0, 500), EXACT, 1, 0)
    assert simulate.SIMULATION_COUNT == before + 1


def test_csv_round_trip(psi30, superiority5):
    P = build_panel(psi30.restrict([2]), superiority5, AllocationPlan(1.0, 1500), EXACT, 2, 9)
    text = P.to_csv()
    assert text.startswith("rep,submodel,n,k,prob,logit,truth\n") and "\r" not in text
    Q = ProbPanel.from_csv(text)
    assert Q.probs.tobytes() == P.probs.tobytes() and Q.logits.tobytes() == P.logits.tobytes()
    assert np.array_equal(Q.truth, P.truth) and np.array_equal(Q.submodel_index, P.submodel_index) and Q.n == P.n


def test_bad_inputs(psi30, superiority5):
    with pytest.raises(ValidationError):
        build_panel(psi30, superiority5, AllocationPlan(1.0, 100), EXACT, 0, 0)
    with pytest.raises(ValidationError):
        ProbPanel(np.full((3, 2), 0.5), np.zeros(2), np.ones((3, 2), bool), 10)
