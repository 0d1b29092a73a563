"""Two-simulation sample size search.

1. Simulate the posterior-probability panel at ``n0``.
2. Extend each logit linearly in n with its limiting slope.
3. Find the smallest n meeting the FDR and power criteria under that line
   field (``n1``).
4. Simulate a second panel at ``n1``.
5. Within each (submodel, metric) subgroup, join rank-d logits at ``n0``
   and ``n1`` with a line attributed to the ``n1`` row holding rank d.
6. Search again under the refitted lines; the result (``n2``) is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import rng as rngmod
from . import simulate
from .model import AllocationPlan, LiftModel, MetricPanel, MultinomialLiftModel, PsiMixture, ValidationError, split_allocation
from .oc import ThresholdChoice, ThresholdScheme, evaluate
from .posterior import PosteriorConfig
from .proxy import slope_field
from .simulate import ProbPanel, build_panel

SCAN_STEPS = 64
#: Ratio between successive bracketing probes.
BRACKET_RATIO = 2 ** 0.25


class RangeExhausted(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(eq=False)
class LogitLineField:
    """Per-cell lines ``logit(n) = anchor_logit + slope * (n - anchor_n)``.

    ``pairing`` (two-point fields) maps rank d within each (submodel, metric)
    subgroup to the attributed row, shape (m, K): ``pairing[i, k]`` is the
    row that receives the line built from the i-th smallest logits.
    """

    slope: np.ndarray
    anchor_n: float
    anchor_logit: np.ndarray
    submodel_index: np.ndarray
    truth: np.ndarray
    weights: np.ndarray
    basis: str
    pairing: np.ndarray | None = None
    second_n: float | None = None
    second_logit: np.ndarray | None = None

    @property
    def intercept(self) -> np.ndarray:
        """Line value at n = 0."""
        return self.anchor_logit - self.slope * self.anchor_n

    def logits_at(self, n: float) -> np.ndarray:
        return self.anchor_logit + self.slope * (n - self.anchor_n)


def extrapolate_theorem(panel0: ProbPanel, slopes: np.ndarray) -> LogitLineField:
    slopes = np.asarray(slopes, float)
    if slopes.shape != panel0.probs.shape:
        raise ValidationError("slope field shape disagrees with the panel")
    return LogitLineField(slopes, float(panel0.n), panel0.logits.copy(), panel0.submodel_index,
                          panel0.truth, panel0.weights, "theorem-initialized")


def evaluate_at(field: LogitLineField, n: float) -> ProbPanel:
    if n < 2:
        raise ValidationError("n must be >= 2")
    L = field.logits_at(n)
    return ProbPanel(expit(L), field.submodel_index, field.truth, int(n), field.weights, L)


def refit_two_point(panel0: ProbPanel, panel1: ProbPanel) -> LogitLineField:
    """Lines through matched order statistics within each (submodel, metric) subgroup."""
    if panel0.probs.shape != panel1.probs.shape or not np.array_equal(panel0.submodel_index, panel1.submodel_index):
        raise ValidationError("panels must share shape and submodel layout")
    n0, n1 = float(panel0.n), float(panel1.n)
    if n0 == n1:
        raise ValidationError("two-point refit needs distinct sample sizes")
    m, K = panel1.probs.shape
    l0_at = np.empty((m, K))
    l1_at = np.empty((m, K))
    pairing = np.empty((m, K), np.int64)
    for s in np.unique(panel1.submodel_index):
        rows = np.flatnonzero(panel1.submodel_index == s)
        for k in range(K):
            # Stable sorts break ties by row index.
            o0 = rows[np.argsort(panel0.logits[rows, k], kind="stable")]
            o1 = rows[np.argsort(panel1.logits[rows, k], kind="stable")]
            l0_at[o1, k] = panel0.logits[o0, k]
            l1_at[o1, k] = panel1.logits[o1, k]
            pairing[rows, k] = o1
    slope = (l1_at - l0_at) / (n1 - n0)
    return LogitLineField(slope, n1, l1_at, panel1.submodel_index, panel1.truth, panel1.weights,
                          "two-point", pairing, n0, l0_at)


@dataclass
class SearchResult:
    n: int
    choice: ThresholdChoice
    trace: list


def _grow(n: int) -> int:
    return max(n + 1, math.ceil(n * BRACKET_RATIO))


def smallest_power_n(field: LogitLineField, scheme: ThresholdScheme, q: float, beta: float,
                     n_lo: int, n_hi: int, trace: list | None = None) -> SearchResult:
    """Smallest total n in ``[n_lo, n_hi]`` whose optimal thresholds meet both criteria.

    Bisection on the power criterion followed by a downward scan of up to
    64 steps, since power under re-optimised thresholds need not be
    monotone in n.
    """
    if not n_lo < n_hi:
        raise ValidationError("n_lo < n_hi required")
    trace = [] if trace is None else trace
    cache: dict[int, ThresholdChoice] = {}

    def ok(n):
        if n not in cache:
            ch = scheme.select(evaluate_at(field, n), q)
            cache[n] = ch
            trace.append({"n": int(n), "gamma": ch.gamma.tolist(), "fdr_hat": ch.fdr_hat,
                          "power_hat": ch.effective_power, "feasible": ch.feasible, "basis": field.basis})
        ch = cache[n]
        return ch.feasible and ch.power_hat >= 1 - beta

    if ok(n_lo):
        return SearchResult(n_lo, cache[n_lo], trace)
    # Bracket on a geometric grid: far beyond the anchors extrapolated lines
    # can break the FDR bound again, so n_hi itself need not qualify.
    lo, hi = n_lo, min(_grow(n_lo), n_hi)
    while not ok(hi):
        if hi >= n_hi:
            ch = cache[hi]
            raise RangeExhausted(f"criteria not met for n in [{n_lo}, {n_hi}]",
                                 {"n_hi": n_hi, "power_hat": ch.effective_power, "fdr_hat": ch.fdr_hat,
                                  "trace": trace})
        lo, hi = hi, min(_grow(hi), n_hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    best = hi
    floor = max(n_lo, hi - SCAN_STEPS)
    n = hi - 1
    while n >= floor:
        if ok(n):
            best = n
            floor = max(n_lo, n - SCAN_STEPS)
        n -= 1
    return SearchResult(best, cache[best], trace)


def _search_widening(field, scheme, q, beta, n_lo, n_hi, n_cap, trace):
    while True:
        try:
            return smallest_power_n(field, scheme, q, beta, n_lo, n_hi, trace)
        except RangeExhausted:
            if n_hi >= n_cap:
                raise
            n_lo, n_hi = n_hi, min(2 * n_hi, n_cap)


@dataclass
class DesignRecommendation:
    n: int
    n_A: int
    n_B: int
    gamma: np.ndarray
    fdr_hat: float
    power_hat: float
    n0: int
    n1: int
    trace: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    simulations: int = 2
    mcse: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n": self.n, "n_A": self.n_A, "n_B": self.n_B, "gamma": [float(g) for g in self.gamma],
            "fdr_hat": self.fdr_hat, "power_hat": self.power_hat, "n0": self.n0, "n1": self.n1,
            "simulations": self.simulations, "seeds": self.seeds, "mcse": self.mcse, "trace": self.trace,
        }


#: Smallest relative gap between the two simulated sample sizes.
MIN_ANCHOR_GAP = 0.1


def second_anchor(n1: int, n0: int) -> int:
    """Second simulation size, pushed to at least 10% away from ``n0``.

    Two-point slopes divide logit differences by ``n1 - n0``; anchors closer
    than this amplify Monte Carlo noise in the order statistics.  ``n1 = n0``
    goes up to ``ceil(1.1 n0)``.
    """
    if abs(n1 - n0) >= MIN_ANCHOR_GAP * n0:
        return int(n1)
    if n1 >= n0:
        return math.ceil((1 + MIN_ANCHOR_GAP) * n0)
    return max(2, math.floor((1 - MIN_ANCHOR_GAP) * n0))


def run_design(psi: PsiMixture, hypotheses: MetricPanel, cfg: PosteriorConfig, scheme: ThresholdScheme,
               q: float, beta: float, n0: int, c: float, seed: int, reps_per_submodel: int,
               model: LiftModel | None = None, workers: int = 1, n_cap_factor: int = 1000,
               panel0: ProbPanel | None = None) -> DesignRecommendation:
    """Recommend total n and thresholds from simulations at two sample sizes.

    ``panel0`` may be supplied to reuse a panel already simulated at ``n0``
    with this seed.
    """
    if n0 < 2:
        raise ValidationError("n0 must be >= 2")
    model = model or MultinomialLiftModel()
    sims = 0
    if panel0 is None:
        panel0 = build_panel(psi, hypotheses, AllocationPlan(c, n0), cfg, reps_per_submodel, seed, model,
                             rngmod.PHASE_N0, workers)
        sims += 1
    elif panel0.n != n0:
        raise ValidationError("supplied panel0 was not simulated at n0")
    slopes = slope_field(panel0, psi, hypotheses, c, model)
    field0 = extrapolate_theorem(panel0, slopes)
    n_lo, n_hi, n_cap = max(4, int(0.1 * n0)), 100 * n0, n_cap_factor * n0
    trace: list = []
    first = _search_widening(field0, scheme, q, beta, n_lo, n_hi, n_cap, trace)
    n1 = second_anchor(first.n, n0)
    panel1 = build_panel(psi, hypotheses, AllocationPlan(c, n1), cfg, reps_per_submodel, seed, model,
                         rngmod.PHASE_N1, workers)
    sims += 1
    field1 = refit_two_point(panel0, panel1)
    second = _search_widening(field1, scheme, q, beta, n_lo, n_hi, n_cap, trace)
    n_A, n_B = split_allocation(AllocationPlan(c, second.n))
    ch = second.choice
    return DesignRecommendation(
        second.n, n_A, n_B, ch.gamma, ch.fdr_hat, ch.power_hat, n0, n1, trace,
        {"seed": seed, "phases": [rngmod.PHASE_N0, rngmod.PHASE_N1]}, sims,
        design_mcse(field1, scheme, q, second.n, ch),
    )


def design_mcse(field: LogitLineField, scheme: ThresholdScheme, q: float, n: int, choice: ThresholdChoice) -> dict:
    """Monte Carlo standard errors at the recommendation.

    ``fdr`` and ``power`` are standard errors of the two estimates at
    (n, gamma).  ``n`` converts the power error into sample-size units
    through the local slope of optimised power over n +/- 5%.
    """
    est = evaluate(evaluate_at(field, n), choice.gamma)
    h = max(1, round(0.05 * n))
    up = scheme.select(evaluate_at(field, n + h), q).effective_power
    down = scheme.select(evaluate_at(field, max(2, n - h)), q).effective_power
    slope = (up - down) / (n + h - max(2, n - h))
    n_se = est.power_mcse / slope if slope > 0 else float("inf")
    return {"fdr": est.fdr_mcse, "power": est.power_mcse, "n": n_se}
