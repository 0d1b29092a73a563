from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abfdr.oc import (
    GAMMA_MIN,
    ThresholdScheme,
    classify,
    common_candidates,
    estimate_oc,
    evaluate,
    optimize_gamma_boxed,
    optimize_gamma_common,
    scan_table,
    validate_gamma,
)
from abfdr.model import ValidationError
from abfdr.simulate import ProbPanel
from conftest import random_panel


def naive_oc(probs, truth, gamma):
    """Row-by-row counts and exact rational averages."""
    m, K = probs.shape
    fdr, pw = Fraction(0), Fraction(0)
    counts = []
    for r in range(m):
        v = s = t = 0
        for k in range(K):
            hit = probs[r, k] >= gamma[k]
            if truth[r, k]:
                t += 1
                s += hit
            else:
                v += hit
        counts.append((v, s, t))
        fdr += Fraction(v, max(v + s, 1))
        pw += Fraction(s, max(t, 1))
    return counts, float(fdr / m), float(pw / m)


def naive_candidates(probs):
    vals = sorted({float(p) for p in probs.ravel() if GAMMA_MIN <= p < 1})
    return sorted(set([GAMMA_MIN] + vals))


def test_classify_and_estimate_match_naive():
    rng = np.random.default_rng(0)
    for i in range(100):
        P = random_panel(rng, ties=i % 3 == 0)
        gamma = rng.uniform(0.5, 0.99, 5)
        counts, f_ref, p_ref = naive_oc(P.probs, P.truth, gamma)
        c = classify(P, gamma)
        assert [tuple(x) for x in zip(c.v, c.s, c.t)] == counts
        est = estimate_oc(c)
        assert abs(est.fdr_hat - f_ref) <= 1e-15 and abs(est.power_hat - p_ref) <= 1e-15


def test_common_matches_exhaustive_scan():
    rng = np.random.default_rng(1)
    for i in range(100):
        P = random_panel(rng, ties=i % 3 == 0)
        q = [0.05, 0.1, 0.2][i % 3]
        best = None
        for g in naive_candidates(P.probs):
            _, f, p = naive_oc(P.probs, P.truth, [g] * 5)
            if f <= q + 1e-12:
                best = (g, f, p)
                break
        ch = optimize_gamma_common(P, q)
        if best is None:
            assert not ch.feasible
            continue
        assert ch.feasible and ch.gamma[0] == best[0]
        assert ch.fdr_hat == pytest.approx(best[1], abs=1e-12)
        assert ch.power_hat == pytest.approx(best[2], abs=1e-12)


def test_candidate_profile_matches_naive_everywhere():
    rng = np.random.default_rng(2)
    P = random_panel(rng, m=40, ties=True)
    cand, fdr, pw = common_candidates(P)
    assert list(cand) == naive_candidates(P.probs)
    for g, f, p in zip(cand, fdr, pw):
        _, f_ref, p_ref = naive_oc(P.probs, P.truth, [g] * 5)
        assert f == pytest.approx(f_ref, abs=1e-12) and p == pytest.approx(p_ref, abs=1e-12)
    lines = scan_table(P).strip().split("\n")
    assert lines[0] == "gamma,fdr_hat,power_hat" and len(lines) == cand.size + 1
    assert float(lines[1].split(",")[0]) == cand[0]


def brute_force_pair(P, q, box):
    """Global optimum over a fine grid plus every value the exact answer can take."""
    data = np.array(naive_candidates(P.probs))
    grid = np.unique(np.r_[data, data - box, data + box, np.linspace(0.5, 0.999, 500)])
    grid = grid[(grid >= 0.5) & (grid < 1)]
    d = (P.probs[:, None, :] >= grid[None, :, None]).astype(int)  # m x G x 2
    t = P.truth
    best = -1.0
    for gi in range(grid.size):
        ok = np.abs(grid - grid[gi]) <= box + 1e-12
        dj = d[:, gi, 0][:, None]
        dk = d[:, ok, 1]
        v = dj * ~t[:, [0]] + dk * ~t[:, [1]]
        s = dj * t[:, [0]] + dk * t[:, [1]]
        fdr = (v / np.maximum(v + s, 1)).mean(0)
        pw = (s / np.maximum(t.sum(1), 1)[:, None]).mean(0)
        feas = fdr <= q + 1e-12
        if feas.any():
            best = max(best, pw[feas].max())
    return best


def test_boxed_matches_brute_force_two_metrics():
    rng = np.random.default_rng(3)
    for i in range(25):
        P = random_panel(rng, m=50, K=2, ties=i % 4 == 0)
        ref = brute_force_pair(P, 0.1, 0.05)
        ch = optimize_gamma_boxed(P, 0.1, 0.05)
        if ref < 0:
            assert not ch.feasible
            continue
        assert ch.feasible
        assert ch.power_hat == pytest.approx(ref, abs=1e-9)
        assert abs(ch.gamma[0] - ch.gamma[1]) <= 0.05 + 1e-12


def test_boxed_dominates_common_and_respects_box():
    rng = np.random.default_rng(4)
    for box in (0.0, 0.02, 0.05, 0.2):
        P = random_panel(rng, m=200)
        com = optimize_gamma_common(P, 0.1)
        bx = optimize_gamma_boxed(P, 0.1, box)
        assert bx.gamma.max() - bx.gamma.min() <= box + 1e-12
        assert bx.power_hat >= com.power_hat - 1e-12
        direct = evaluate(P, bx.gamma)
        assert direct.fdr_hat <= 0.1 + 1e-12 and direct.power_hat == pytest.approx(bx.power_hat, abs=1e-12)


def test_weighted_rows_match_replication():
    rng = np.random.default_rng(5)
    P = random_panel(rng, m=30)
    w = rng.integers(1, 4, 30)
    Pw = ProbPanel(P.probs, P.submodel_index, P.truth, P.n, w.astype(float))
    Pr = ProbPanel(np.repeat(P.probs, w, 0), np.repeat(P.submodel_index, w), np.repeat(P.truth, w, 0), P.n)
    g = np.full(5, 0.8)
    a, b = evaluate(Pw, g), evaluate(Pr, g)
    assert a.fdr_hat == pytest.approx(b.fdr_hat, abs=1e-12) and a.power_hat == pytest.approx(b.power_hat, abs=1e-12)
    assert optimize_gamma_common(Pw, 0.1).gamma[0] == optimize_gamma_common(Pr, 0.1).gamma[0]


def test_gamma_validation():
    with pytest.raises(ValidationError):
        validate_gamma([0.4, 0.9], 2)
    with pytest.raises(ValidationError):
        validate_gamma(1.0, 3)
    with pytest.raises(ValidationError):
        ThresholdScheme("holm")
    with pytest.raises(ValidationError):
        optimize_gamma_common(random_panel(np.random.default_rng(0)), 1.5)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.5, 0.99), st.floats(0.5, 0.99))
def test_oc_properties(seed, g1, g2):
    P = random_panel(np.random.default_rng(seed), m=30)
    lo, hi = sorted((g1, g2))
    a, b = evaluate(P, np.full(5, lo)), evaluate(P, np.full(5, hi))
    assert 0 <= a.fdr_hat <= 1 and 0 <= a.power_hat <= 1
    # Raising a common threshold never adds discoveries.
    assert b.power_hat <= a.power_hat + 1e-15
    ch = optimize_gamma_common(P, 0.1)
    if ch.feasible:
        assert ch.fdr_hat <= 0.1 + 1e-12
