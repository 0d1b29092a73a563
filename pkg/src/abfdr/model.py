"""Hypotheses, submodels and the two lift model families.

A model family turns a :class:`Submodel` (cell probabilities for groups A
and B) into data, posterior probabilities for each metric's alternative
hypothesis, and the asymptotic covariance of the lift estimates.  Two
families are provided:

* :class:`MultinomialLiftModel` -- all K binary outcomes are generated
  jointly from one multinomial over the admissible outcome combinations,
  analysed with Dirichlet posteriors.
* :class:`IndependentBinomialLiftModel` -- each outcome is generated as an
  independent binomial from the submodel's marginals, analysed with
  independent Beta posteriors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .posterior import PosteriorConfig, kde_interval_prob, lift_interval_prob_beta

#: Tolerance for treating a lift as sitting exactly on an interval endpoint.
#: LP-constructed cells reproduce target marginals only to ~1e-10.
BOUNDARY_ATOL = 1e-9

METRIC_NAMES = ("engaged", "editor", "pricing", "dialog", "created")


class ValidationError(ValueError):
    """Input violates a documented invariant."""


class ConsistencyError(ValueError):
    """A submodel's labelled false set disagrees with its parameters."""


def _as_extended(x) -> float:
    if isinstance(x, str):
        x = float(x)  # accepts "inf" / "-inf"
    return float(x)


@dataclass(frozen=True)
class HypothesisSpec:
    """Interval alternative ``H1: delta_L < theta < delta_U``.

    Endpoints may be ``-inf`` / ``inf`` but not both.
    """

    delta_L: float
    delta_U: float

    def __post_init__(self):
        lo, hi = _as_extended(self.delta_L), _as_extended(self.delta_U)
        object.__setattr__(self, "delta_L", lo)
        object.__setattr__(self, "delta_U", hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValidationError("hypothesis endpoints must not be NaN")
        if not lo < hi:
            raise ValidationError(f"delta_L < delta_U required, got ({lo}, {hi})")
        if math.isinf(lo) and math.isinf(hi):
            raise ValidationError("at least one endpoint must be finite")

    def contains(self, theta: float, atol: float = BOUNDARY_ATOL) -> bool:
        """Open-interval membership; values within ``atol`` of an endpoint are outside."""
        return (theta > self.delta_L + atol) and (theta < self.delta_U - atol)


@dataclass(frozen=True)
class MetricPanel:
    hypotheses: tuple[HypothesisSpec, ...]

    def __post_init__(self):
        hyps = tuple(self.hypotheses)
        if len(hyps) < 1:
            raise ValidationError("need at least one metric")
        object.__setattr__(self, "hypotheses", hyps)

    @property
    def K(self) -> int:
        return len(self.hypotheses)

    @property
    def delta_L(self) -> np.ndarray:
        return np.array([h.delta_L for h in self.hypotheses])

    @property
    def delta_U(self) -> np.ndarray:
        return np.array([h.delta_U for h in self.hypotheses])

    @classmethod
    def superiority(cls, K: int) -> "MetricPanel":
        """K one-sided ``theta > 0`` hypotheses."""
        return cls(tuple(HypothesisSpec(0.0, math.inf) for _ in range(K)))


def _optimizely_membership() -> np.ndarray:
    # Rows: engaged, editor, pricing, dialog, created.  Columns: cells 1..13.
    M = np.zeros((5, 13), dtype=np.int8)
    M[0, 1:] = 1
    M[1, 7:13] = 1
    M[2, 4:7] = 1
    M[2, 10:13] = 1
    for v in range(1, 5):
        M[3, 3 * v - 1] = 1
        M[3, 3 * v] = 1
        M[4, 3 * v] = 1
    return M


#: Cell membership of the 13-cell engagement model (row k lists the cells in
#: which outcome k occurs).
OPTIMIZELY_MEMBERSHIP = _optimizely_membership()
OPTIMIZELY_MEMBERSHIP.setflags(write=False)

#: Group-A marginals of the original site.
OPTIMIZELY_MARGINALS_A = (0.489, 0.230, 0.156, 0.047, 0.032)


def validate_probability_vector(eta, name: str = "eta", atol: float = 1e-12) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if eta.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    if np.any(~np.isfinite(eta)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.any(eta < -atol):
        raise ValidationError(f"{name} has negative entries (min {eta.min():.3g})")
    total = eta.sum()
    if abs(total - 1.0) > atol:
        raise ValidationError(f"{name} must sum to 1 (got {total!r})")
    return np.clip(eta, 0.0, None)


def marginals_from_eta(eta, membership: np.ndarray = OPTIMIZELY_MEMBERSHIP) -> np.ndarray:
    """Marginal outcome probabilities ``pi_k = sum of eta over cells in outcome k``."""
    membership = np.asarray(membership)
    eta = validate_probability_vector(eta)
    if eta.shape[0] != membership.shape[1]:
        raise ValidationError(f"eta has {eta.shape[0]} cells, expected {membership.shape[1]}")
    return np.clip(membership @ eta, 0.0, 1.0)


def lift(pi_A, pi_B):
    """Relative difference ``(pi_B - pi_A) / pi_A``; works elementwise on arrays."""
    pi_A = np.asarray(pi_A, dtype=float)
    if np.any(pi_A == 0):
        raise ZeroDivisionError("lift undefined for pi_A = 0")
    out = (np.asarray(pi_B, dtype=float) - pi_A) / pi_A
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class Submodel:
    """One data-generating scenario.

    ``false_set`` holds 0-based metric indices whose alternative is false.
    """

    params_A: np.ndarray
    params_B: np.ndarray
    false_set: frozenset[int]
    weight: float = 1.0
    label: str = ""

    def __post_init__(self):
        a = validate_probability_vector(self.params_A, "params_A", atol=1e-9)
        b = validate_probability_vector(self.params_B, "params_B", atol=1e-9)
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "params_A", a)
        object.__setattr__(self, "params_B", b)
        object.__setattr__(self, "false_set", frozenset(int(k) for k in self.false_set))
        if self.weight < 0:
            raise ValidationError("submodel weight must be nonnegative")


@dataclass(frozen=True, eq=False)
class PsiMixture:
    """Equal or weighted mixture of submodels defining the design model."""

    submodels: tuple[Submodel, ...]
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        subs = tuple(self.submodels)
        if not subs:
            raise ValidationError("mixture needs at least one submodel")
        w = np.array([s.weight for s in subs] if self.weights is None else self.weights, float)
        if w.shape != (len(subs),) or np.any(w < 0) or w.sum() <= 0:
            raise ValidationError("mixture weights must be nonnegative with positive sum")
        w = w / w.sum()
        w.setflags(write=False)
        object.__setattr__(self, "submodels", subs)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.submodels)

    def restrict(self, sizes: Sequence[int]) -> "PsiMixture":
        """Equal mixture of the submodels whose false set has one of ``sizes``."""
        keep = [s for s in self.submodels if len(s.false_set) in set(sizes)]
        if not keep:
            raise ValidationError(f"no submodels with |false set| in {sorted(sizes)}")
        return PsiMixture(tuple(keep), np.ones(len(keep)))


def check_nontrivial(psi: PsiMixture, K: int) -> None:
    """Every submodel should have some but not all hypotheses false."""
    for i, s in enumerate(psi.submodels):
        if not (0 < len(s.false_set) < K):
            raise ValidationError(
                f"submodel {i} has |false set| = {len(s.false_set)}; need 0 < |false| < {K}"
            )


@dataclass(frozen=True)
class AllocationPlan:
    """Total sample size ``n`` split with ratio ``n_A ~ c * n_B``."""

    c: float
    n: int

    def __post_init__(self):
        if not self.c > 0:
            raise ValidationError("allocation ratio c must be positive")
        if int(self.n) != self.n or self.n < 2:
            raise ValidationError("total sample size n must be an integer >= 2")
        object.__setattr__(self, "n", int(self.n))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_allocation(plan: AllocationPlan) -> tuple[int, int]:
    """Split ``plan.n`` into ``(n_A, n_B)`` with ``n_A`` the nearest integer to ``c * n_B``.

    Ties go to group A (half-up rounding), so c = 1 with odd n gives A the
    extra unit.
    """
    n, c = plan.n, plan.c
    base = n / (1.0 + c)
    best = None
    for n_B in {math.floor(base), math.ceil(base), math.floor(base) - 1, math.ceil(base) + 1}:
        if not 1 <= n_B <= n - 1:
            continue
        n_A = n - n_B
        # Prefer n_B for which n_A equals round(c n_B); then closeness to c n_B;
        # then smaller n_B (larger n_A) as the final half-up tie-break.
        key = (n_A != _round_half_up(c * n_B), abs(n_A - c * n_B), n_B)
        if best is None or key < best[0]:
            best = (key, n_A, n_B)
    if best is None:
        raise ValidationError(f"n = {n} too small to give both groups at least one unit")
    return best[1], best[2]


def total_from_group_a(n_A: int, c: float) -> int:
    """Total n for a group-A size: ``n_A + round(n_A / c)`` (c = 1 gives ``2 n_A``)."""
    if n_A < 1 or not c > 0:
        raise ValidationError("n_A >= 1 and c > 0 required")
    return int(n_A) + max(1, _round_half_up(n_A / c))


class LiftModel:
    """Interface shared by the lift model families.

    Subclasses implement data generation, posterior probabilities and the
    asymptotic covariance of the lift MLE.  Submodel parameters are cell
    probabilities over ``membership.shape[1]`` cells in both families.
    """

    name = "base"

    def __init__(self, membership=OPTIMIZELY_MEMBERSHIP):
        M = np.asarray(membership, dtype=float)
        if M.ndim != 2 or not np.all((M == 0) | (M == 1)):
            raise ValidationError("membership must be a 0/1 matrix")
        self.membership = M
        self.K, self.C = M.shape

    def marginals(self, eta) -> np.ndarray:
        return np.clip(self.membership @ np.asarray(eta, float), 0.0, 1.0)

    def theta(self, submodel: Submodel) -> np.ndarray:
        pa = self.marginals(submodel.params_A)
        pb = self.marginals(submodel.params_B)
        return lift(pa, pb)

    def truth_flags(self, submodel: Submodel, panel: MetricPanel) -> np.ndarray:
        """Per-metric flags, True where the alternative holds.

        Raises :class:`ConsistencyError` when the flags disagree with the
        submodel's labelled false set.
        """
        if panel.K != self.K:
            raise ValidationError(f"panel has {panel.K} metrics, model has {self.K}")
        theta = self.theta(submodel)
        flags = np.array([h.contains(t) for h, t in zip(panel.hypotheses, theta)])
        expected = np.array([k not in submodel.false_set for k in range(self.K)])
        if not np.array_equal(flags, expected):
            bad = np.flatnonzero(flags != expected).tolist()
            raise ConsistencyError(f"submodel mislabeled at metrics {bad}: theta = {theta}")
        return flags

    def prior_concentration(self, prior_alpha) -> np.ndarray:
        a = np.broadcast_to(np.asarray(prior_alpha, float), (self.C,)).copy()
        if np.any(a <= 0):
            raise ValidationError("prior concentrations must be positive")
        return a

    # Subclass hooks -------------------------------------------------------
    def sample_dataset(self, submodel, n_A, n_B, rng):
        raise NotImplementedError

    def posterior_prob(self, data, panel, cfg, rng):
        raise NotImplementedError

    def asymptotic_covariance(self, submodel, c) -> np.ndarray:
        raise NotImplementedError

    # Shared lift delta method ---------------------------------------------
    @staticmethod
    def _lift_covariance(pi_A, pi_B, cov_A, cov_B, c):
        """Per-unit-total-n covariance of the lift estimates by the delta method."""
        if np.any(pi_A <= 0):
            raise ZeroDivisionError("asymptotic variance undefined for pi_A = 0")
        # Group fractions of the total sample: n_A/n -> c/(1+c), n_B/n -> 1/(1+c).
        jac_A = np.diag(-pi_B / pi_A**2)
        jac_B = np.diag(1.0 / pi_A)
        return (1.0 + c) / c * jac_A @ cov_A @ jac_A + (1.0 + c) * jac_B @ cov_B @ jac_B


@dataclass(frozen=True)
class DatasetCounts:
    """Observed data for one repetition.

    For the multinomial family ``counts_*`` are cell counts; for the
    independent family they are per-outcome success counts.
    """

    counts_A: np.ndarray
    counts_B: np.ndarray
    n_A: int
    n_B: int


class MultinomialLiftModel(LiftModel):
    """Joint multinomial model over admissible outcome combinations."""

    name = "multinomial"

    def sample_dataset(self, submodel: Submodel, n_A: int, n_B: int, rng) -> DatasetCounts:
        ca = rng.multinomial(n_A, submodel.params_A)
        cb = rng.multinomial(n_B, submodel.params_B)
        return DatasetCounts(ca, cb, n_A, n_B)

    def marginal_beta_params(self, counts, prior_alpha):
        """Beta parameters of each outcome probability under the Dirichlet posterior."""
        post = self.prior_concentration(prior_alpha) + np.asarray(counts, float)
        a = self.membership @ post
        return a, post.sum() - a

    def posterior_prob(self, data: DatasetCounts, panel: MetricPanel, cfg: PosteriorConfig, rng):
        prior = self.prior_concentration(cfg.prior_alpha)
        if cfg.method == "exact":
            aA, bA = self.marginal_beta_params(data.counts_A, prior)
            aB, bB = self.marginal_beta_params(data.counts_B, prior)
            p = lift_interval_prob_beta(aA, bA, aB, bB, panel.delta_L, panel.delta_U)
            return np.clip(p, cfg.eps, 1.0 - cfg.eps), {}
        alpha_A = prior + data.counts_A
        alpha_B = prior + data.counts_B
        return _kde_from_sampler(
            lambda size: (
                _dirichlet(rng, alpha_A, size) @ self.membership.T,
                _dirichlet(rng, alpha_B, size) @ self.membership.T,
            ),
            panel,
            cfg,
        )

    def asymptotic_covariance(self, submodel: Submodel, c: float) -> np.ndarray:
        M = self.membership
        out = []
        for eta in (submodel.params_A, submodel.params_B):
            sigma = np.diag(eta) - np.outer(eta, eta)
            out.append(M @ sigma @ M.T)
        pa, pb = self.marginals(submodel.params_A), self.marginals(submodel.params_B)
        return self._lift_covariance(pa, pb, out[0], out[1], c)


class IndependentBinomialLiftModel(LiftModel):
    """Each outcome is an independent binomial with the submodel's marginals."""

    name = "independent"

    def sample_dataset(self, submodel: Submodel, n_A: int, n_B: int, rng) -> DatasetCounts:
        sa = rng.binomial(n_A, self.marginals(submodel.params_A))
        sb = rng.binomial(n_B, self.marginals(submodel.params_B))
        return DatasetCounts(sa, sb, n_A, n_B)

    def beta_params(self, successes, n, cfg):
        a0, b0 = cfg.beta_prior
        s = np.asarray(successes, float)
        return a0 + s, b0 + (n - s)

    def posterior_prob(self, data: DatasetCounts, panel: MetricPanel, cfg: PosteriorConfig, rng):
        aA, bA = self.beta_params(data.counts_A, data.n_A, cfg)
        aB, bB = self.beta_params(data.counts_B, data.n_B, cfg)
        if cfg.method == "exact":
            p = lift_interval_prob_beta(aA, bA, aB, bB, panel.delta_L, panel.delta_U)
            return np.clip(p, cfg.eps, 1.0 - cfg.eps), {}
        return _kde_from_sampler(
            lambda size: (rng.beta(aA, bA, size=(size, self.K)), rng.beta(aB, bB, size=(size, self.K))),
            panel,
            cfg,
        )

    def asymptotic_covariance(self, submodel: Submodel, c: float) -> np.ndarray:
        pa, pb = self.marginals(submodel.params_A), self.marginals(submodel.params_B)
        return self._lift_covariance(pa, pb, np.diag(pa * (1 - pa)), np.diag(pb * (1 - pb)), c)


def _dirichlet(rng, alpha, size):
    g = rng.standard_gamma(alpha, size=(size, alpha.shape[0]))
    return g / g.sum(axis=1, keepdims=True)


def _kde_from_sampler(sampler, panel: MetricPanel, cfg: PosteriorConfig):
    """Draw lift samples, redrawing any with an undefined lift, then smooth."""
    pa, pb = sampler(cfg.draws)
    bad = np.any(pa <= 0, axis=1)
    rejected = int(bad.sum())
    tries = 0
    while bad.any() and tries < 100:
        ra, rb = sampler(int(bad.sum()))
        pa[bad], pb[bad] = ra, rb
        bad = np.any(pa <= 0, axis=1)
        rejected += int(bad.sum())
        tries += 1
    if bad.any():
        raise FloatingPointError("could not draw posterior samples with defined lift")
    theta = (pb - pa) / pa
    p = kde_interval_prob(theta, panel.delta_L, panel.delta_U)
    info = {"rejected_draws": rejected} if rejected > cfg.draws // 100 else {}
    return np.clip(p, cfg.eps, 1.0 - cfg.eps), info


MODEL_FAMILIES = {
    "multinomial": MultinomialLiftModel,
    "independent": IndependentBinomialLiftModel,
}
