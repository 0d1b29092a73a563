"""Large-sample proxy to the joint sampling distribution of posterior probabilities.

The MLE of the lifts is approximately ``N(theta, Sigma / n)`` with ``Sigma``
the per-unit covariance from the delta method.  Plugging a draw of the MLE
into the normal posterior approximation gives proxy probabilities whose
logits are asymptotically linear in ``n`` with slope

    (0.5 - 1{theta_k outside (delta_L, delta_U)}) * min(a_U^2, a_L^2),
    a = (delta - theta_k) / sqrt(Sigma_kk).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize, special

from . import rng as rngmod
from .model import (
    BOUNDARY_ATOL,
    AllocationPlan,
    HypothesisSpec,
    LiftModel,
    MetricPanel,
    MultinomialLiftModel,
    PsiMixture,
    Submodel,
    ValidationError,
)
from .simulate import ProbPanel


class DegenerateHypothesis(ValueError):
    pass


def asymptotic_covariance(submodel: Submodel, c: float, model: LiftModel | None = None) -> np.ndarray:
    """K x K per-unit-total-n covariance of the lift MLE."""
    model = model or MultinomialLiftModel()
    return model.asymptotic_covariance(submodel, c)


def asymptotic_variance(submodel: Submodel, c: float, model: LiftModel | None = None) -> np.ndarray:
    """Diagonal of :func:`asymptotic_covariance`, so ``Var(theta_hat_k) ~ avar_k / n``."""
    return np.diag(asymptotic_covariance(submodel, c, model)).copy()


def a_coefficient(delta: float, theta_k: float, avar_k: float) -> float:
    if not avar_k > 0:
        raise ValidationError("avar_k must be positive")
    if math.isinf(delta):
        return delta
    return (delta - theta_k) / math.sqrt(avar_k)


def limiting_slope(theta_k: float, avar_k: float, hypothesis: HypothesisSpec) -> float:
    """Limit of d/dn logit of the proxy probability for one metric.

    Infinite endpoints drop out of the minimum; a theta within
    ``BOUNDARY_ATOL`` of an endpoint gives slope 0.
    """
    lo, hi = hypothesis.delta_L, hypothesis.delta_U
    if math.isinf(lo) and math.isinf(hi):
        raise DegenerateHypothesis("both endpoints infinite")
    if min(abs(theta_k - lo), abs(theta_k - hi)) <= BOUNDARY_ATOL:
        return 0.0
    sq = [a_coefficient(d, theta_k, avar_k) ** 2 for d in (lo, hi) if not math.isinf(d)]
    sign = 0.5 - (0.0 if hypothesis.contains(theta_k) else 1.0)
    return sign * min(sq)


def slope_field(panel: ProbPanel, psi: PsiMixture, hypotheses: MetricPanel, c: float,
                model: LiftModel | None = None) -> np.ndarray:
    """m x K limiting slopes for the rows of ``panel`` (by their submodel)."""
    model = model or MultinomialLiftModel()
    per_sub = np.empty((len(psi), hypotheses.K))
    for s, sub in enumerate(psi.submodels):
        theta, avar = model.theta(sub), asymptotic_variance(sub, c, model)
        per_sub[s] = [limiting_slope(theta[k], avar[k], h) for k, h in enumerate(hypotheses.hypotheses)]
    return per_sub[panel.submodel_index]


def conditional_inversion(u, mean, cov) -> np.ndarray:
    """Multivariate normal draws by sequential conditional quantiles.

    Component k is the ``u[:, k]`` quantile of its normal distribution given
    components ``0..k-1``.  ``u`` has shape (m, K).
    """
    u = np.atleast_2d(np.asarray(u, float))
    mean = np.asarray(mean, float)
    cov = np.asarray(cov, float)
    m, K = u.shape
    z = special.ndtri(u)
    x = np.empty((m, K))
    for k in range(K):
        if k == 0:
            mu, var = np.full(m, mean[0]), cov[0, 0]
        else:
            S11 = cov[:k, :k]
            s12 = cov[:k, k]
            coef = np.linalg.solve(S11, s12)
            mu = mean[k] + (x[:, :k] - mean[:k]) @ coef
            var = cov[k, k] - s12 @ coef
        if not var > 0:
            raise np.linalg.LinAlgError(f"covariance not positive definite at component {k}")
        x[:, k] = mu + math.sqrt(var) * z[:, k]
    return x


def proxy_logit(theta_hat, sd, delta_L, delta_U) -> np.ndarray:
    """logit of ``Phi((dU - th)/sd) - Phi((dL - th)/sd)`` evaluated in log space."""
    th = np.asarray(theta_hat, float)
    hi = (np.asarray(delta_U, float) - th) / sd
    lo = (np.asarray(delta_L, float) - th) / sd
    lhi, llo = special.log_ndtr(hi), special.log_ndtr(lo)
    with np.errstate(divide="ignore"):
        log_p = lhi + np.log1p(-np.exp(llo - lhi))
        log_q = np.logaddexp(llo, special.log_ndtr(-hi))
    return log_p - log_q


def proxy_probability(theta_hat, sd, delta_L, delta_U) -> np.ndarray:
    th = np.asarray(theta_hat, float)
    return special.ndtr((np.asarray(delta_U, float) - th) / sd) - special.ndtr((np.asarray(delta_L, float) - th) / sd)


class ProxyRow:
    """Proxy probabilities for one submodel at a fixed point ``u`` as a function of n."""

    def __init__(self, submodel: Submodel, hypotheses: MetricPanel, c: float, u, model=None):
        model = model or MultinomialLiftModel()
        self.theta = model.theta(submodel)
        self.cov = asymptotic_covariance(submodel, c, model)
        self.avar = np.diag(self.cov).copy()
        self.hyp = hypotheses
        # Standardised deviation of the MLE, independent of n.
        dev = conditional_inversion(np.atleast_2d(u), np.zeros(hypotheses.K), self.cov)[0]
        self.z = dev / np.sqrt(self.avar)

    def theta_hat(self, n):
        return self.theta + self.z * np.sqrt(self.avar / n)

    def logit(self, n):
        return proxy_logit(self.theta_hat(n), np.sqrt(self.avar / n), self.hyp.delta_L, self.hyp.delta_U)

    def prob(self, n):
        return proxy_probability(self.theta_hat(n), np.sqrt(self.avar / n), self.hyp.delta_L, self.hyp.delta_U)

    def a(self):
        lo = np.array([a_coefficient(d, t, v) for d, t, v in zip(self.hyp.delta_L, self.theta, self.avar)])
        hi = np.array([a_coefficient(d, t, v) for d, t, v in zip(self.hyp.delta_U, self.theta, self.avar)])
        return lo, hi


def recover_b(p_logit: float, a_L: float, a_U: float, n: float, upper_branch: bool = True) -> float:
    """Offset b with ``Phi(a_U sqrt(n) + b) - Phi(a_L sqrt(n) + b)`` matching a logit at ``n``.

    One finite endpoint gives a closed form through the normal quantile;
    with two finite endpoints the probability is unimodal in b and
    ``upper_branch`` picks the root above the mode.
    """
    r = math.sqrt(n)
    if math.isinf(a_U) or math.isinf(a_L):
        # One finite endpoint: q = Phi(x) with x = a r + b, where q = 1 - p
        # (upper interval) or q = p.  Work with log of the smaller tail.
        L = p_logit if math.isinf(a_U) else -p_logit
        log_q, log_1mq = -np.logaddexp(0.0, L), -np.logaddexp(0.0, -L)
        x = special.ndtri_exp(log_q) if log_q <= log_1mq else -special.ndtri_exp(log_1mq)
        return float(x) - (a_L if math.isinf(a_U) else a_U) * r
    target = special.expit(p_logit)
    mode = -(a_U + a_L) * r / 2
    f = lambda b: special.ndtr(a_U * r + b) - special.ndtr(a_L * r + b) - target
    span = abs(a_U - a_L) * r + 50
    return optimize.brentq(f, mode, mode + span, xtol=1e-14) if upper_branch else \
        optimize.brentq(f, mode - span, mode, xtol=1e-14)


def theorem_form_prob(a_L: float, a_U: float, b: float, n: float) -> float:
    r = math.sqrt(n)
    up = 1.0 if math.isinf(a_U) and a_U > 0 else special.ndtr(a_U * r + b)
    lo = 0.0 if math.isinf(a_L) and a_L < 0 else special.ndtr(a_L * r + b)
    return float(up - lo)


def proxy_panel(psi: PsiMixture, hypotheses: MetricPanel, plan: AllocationPlan, reps_per_submodel: int,
                seed: int, model: LiftModel | None = None) -> ProbPanel:
    """Proxy sample: uniform points mapped to MLE draws, then to normal-posterior probabilities."""
    model = model or MultinomialLiftModel()
    n = plan.n
    K = hypotheses.K
    logits, subs, truth = [], [], []
    for s, sub in enumerate(psi.submodels):
        u = np.array([rngmod.stream(seed, rngmod.PHASE_PROXY, s, r).random(K) for r in range(reps_per_submodel)])
        theta = model.theta(sub)
        cov = asymptotic_covariance(sub, plan.c, model)
        try:
            th_hat = conditional_inversion(u, theta, cov / n)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"submodel {s} ({sub.label}): {exc}") from exc
        sd = np.sqrt(np.diag(cov) / n)
        logits.append(proxy_logit(th_hat, sd, hypotheses.delta_L, hypotheses.delta_U))
        subs.append(np.full(reps_per_submodel, s))
        truth.append(np.tile(model.truth_flags(sub, hypotheses), (reps_per_submodel, 1)))
    L = np.vstack(logits)
    return ProbPanel.from_logits(L, np.concatenate(subs), np.vstack(truth), n,
                                 seed_record=rngmod.provenance(seed, rngmod.PHASE_PROXY))
