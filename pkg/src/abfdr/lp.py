"""Linear programs that build multinomial submodels from target marginals and lifts."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .model import (
    OPTIMIZELY_MEMBERSHIP,
    MetricPanel,
    MultinomialLiftModel,
    PsiMixture,
    Submodel,
    ValidationError,
    check_nontrivial,
)

RESIDUAL_TOL = 1e-9


class ConstructionError(ValueError):
    """Target marginals or lifts admit no valid multinomial model."""


class InfeasibleLP(ValueError):
    def __init__(self, message, constraint=None, violation=None):
        super().__init__(message)
        self.constraint = constraint
        self.violation = violation


@dataclass
class LpProblem:
    """``opt c.x`` s.t. ``A_eq x = b_eq``, ``A_ub x <= b_ub``, ``lo <= x <= hi``."""

    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    bounds: list[tuple[float, float]] | None = None
    maximize: bool = True
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, float)
        n = self.c.shape[0]

        def mat(A, b, tag):
            if A is None:
                return np.zeros((0, n)), np.zeros(0)
            A = np.atleast_2d(np.asarray(A, float))
            b = np.atleast_1d(np.asarray(b, float))
            if A.shape[1] != n or A.shape[0] != b.shape[0]:
                raise ValidationError(f"{tag} constraint dimensions {A.shape} / {b.shape} vs {n} variables")
            return A, b

        self.A_eq, self.b_eq = mat(self.A_eq, self.b_eq, "equality")
        self.A_ub, self.b_ub = mat(self.A_ub, self.b_ub, "inequality")
        if self.bounds is None:
            self.bounds = [(0.0, 1.0)] * n
        if len(self.bounds) != n:
            raise ValidationError("one (lo, hi) bound per variable required")
        for lo, hi in self.bounds:
            if lo > hi:
                raise ValidationError(f"bound lo {lo} > hi {hi}")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def residuals(self, x) -> dict[str, float]:
        x = np.asarray(x, float)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        eq = np.abs(self.A_eq @ x - self.b_eq).max(initial=0.0)
        ub = np.maximum(self.A_ub @ x - self.b_ub, 0).max(initial=0.0)
        bd = max(np.maximum(lo - x, 0).max(initial=0.0), np.maximum(x - hi, 0).max(initial=0.0))
        return {"eq": float(eq), "ub": float(ub), "bounds": float(bd)}


def _violation_report(problem: LpProblem):
    """Find the point minimising the largest constraint violation and name that constraint."""
    n, me, mu = problem.n, problem.A_eq.shape[0], problem.A_ub.shape[0]
    # Variables (x, s): |A_eq x - b| <= s, A_ub x - b <= s.
    c = np.r_[np.zeros(n), 1.0]
    rows, rhs = [], []
    for A, b in ((problem.A_eq, problem.b_eq), (-problem.A_eq, -problem.b_eq), (problem.A_ub, problem.b_ub)):
        if A.shape[0]:
            rows.append(np.c_[A, -np.ones(A.shape[0])])
            rhs.append(b)
    res = linprog(c, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs),
                  bounds=list(problem.bounds) + [(0, None)], method="highs")
    x = res.x[:n]
    viol = np.r_[np.abs(problem.A_eq @ x - problem.b_eq), np.maximum(problem.A_ub @ x - problem.b_ub, 0)]
    i = int(np.argmax(viol))
    label = f"eq[{i}]" if i < me else f"ub[{i - me}]"
    label = problem.names.get(label, label)
    return label, float(viol[i])


def solve_lp(problem: LpProblem) -> tuple[np.ndarray, float]:
    """Solve a small dense LP with HiGHS.

    Returns ``(x, objective)``.  Raises :class:`InfeasibleLP` naming the
    constraint that stays most violated at the least-violating point.
    """
    sign = -1.0 if problem.maximize else 1.0
    res = linprog(
        sign * problem.c,
        A_ub=problem.A_ub if problem.A_ub.shape[0] else None,
        b_ub=problem.b_ub if problem.A_ub.shape[0] else None,
        A_eq=problem.A_eq if problem.A_eq.shape[0] else None,
        b_eq=problem.b_eq if problem.A_eq.shape[0] else None,
        bounds=problem.bounds,
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        label, v = _violation_report(problem)
        raise InfeasibleLP(f"LP infeasible; constraint {label} violated by {v:.3g}", label, v)
    if res.status == 3:
        raise RuntimeError("LP unbounded; cannot happen with finite bounds")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    x = res.x
    if max(problem.residuals(x).values()) > RESIDUAL_TOL:
        raise RuntimeError(f"LP residuals too large: {problem.residuals(x)}")
    return x, float(problem.c @ x)


def _check_nesting(marginals, membership):
    """Outcome j whose cells all lie inside outcome i's cells needs pi_j <= pi_i."""
    M = np.asarray(membership, bool)
    K = M.shape[0]
    for i, j in itertools.permutations(range(K), 2):
        if np.all(M[i] >= M[j]) and marginals[j] > marginals[i] + RESIDUAL_TOL:
            raise ConstructionError(
                f"marginal {j + 1} ({marginals[j]}) exceeds marginal {i + 1} ({marginals[i]}), "
                f"but outcome {j + 1} requires outcome {i + 1}"
            )


def construct_group(marginals, membership=OPTIMIZELY_MEMBERSHIP, objective: str = "maxmin") -> np.ndarray:
    """Cell probabilities reproducing ``marginals`` under ``membership``.

    Cells that no feasible solution can make positive are pinned to zero.
    With ``objective="maxmin"`` the smallest free cell is made as large as
    possible; ``"feasible"`` accepts any feasible vertex.
    """
    pi = np.asarray(marginals, float)
    M = np.asarray(membership, float)
    K, C = M.shape
    if pi.shape != (K,):
        raise ValidationError(f"expected {K} marginals, got {pi.shape}")
    if np.any(pi < 0) or np.any(pi > 1):
        raise ConstructionError(f"marginals must lie in [0, 1]: {pi.tolist()}")
    _check_nesting(pi, M)
    A_eq = np.vstack([np.ones(C), M])
    b_eq = np.r_[1.0, pi]
    names = {"eq[0]": "simplex sum"} | {f"eq[{k + 1}]": f"marginal {k + 1}" for k in range(K)}

    free = np.ones(C, bool)
    for v in range(C):
        c = np.zeros(C)
        c[v] = 1.0
        try:
            _, best = solve_lp(LpProblem(c, A_eq, b_eq, names=names))
        except InfeasibleLP as exc:
            raise ConstructionError(f"marginals {pi.tolist()} infeasible: {exc}") from exc
        free[v] = best > 1e-12
    bounds = [(0.0, 1.0) if f else (0.0, 0.0) for f in free]

    if objective == "maxmin" and free.sum() > 0:
        # Variables (eta, t): maximise t with eta_v >= t on free cells.
        c = np.r_[np.zeros(C), 1.0]
        A_ub = np.c_[-np.eye(C)[free], np.ones(free.sum())]
        prob = LpProblem(c, np.c_[A_eq, np.zeros(K + 1)], b_eq, A_ub, np.zeros(free.sum()),
                         bounds + [(0.0, 1.0)], names=names)
        x, _ = solve_lp(prob)
        eta = x[:C]
    elif objective in ("maxmin", "feasible"):
        eta, _ = solve_lp(LpProblem(np.zeros(C), A_eq, b_eq, bounds=bounds, names=names))
    else:
        raise ValidationError(f"unknown LP objective {objective!r}")
    eta = np.where(eta < 0, 0.0, eta)
    eta = np.where(free, eta, 0.0)
    return eta


@dataclass(frozen=True)
class SubmodelTarget:
    """Group-A marginals, per-metric target lifts and the false set (0-based)."""

    marginals_A: tuple
    lift_targets: tuple
    false_set: frozenset

    def validate(self, panel: MetricPanel) -> None:
        if len(self.lift_targets) != panel.K or len(self.marginals_A) != panel.K:
            raise ValidationError("target dimensions disagree with the metric panel")
        for k, (h, t) in enumerate(zip(panel.hypotheses, self.lift_targets)):
            if h.contains(t) == (k in self.false_set):
                raise ValidationError(f"lift target {t} for metric {k + 1} inconsistent with false set")


def construct_submodel(target: SubmodelTarget, panel: MetricPanel, membership=OPTIMIZELY_MEMBERSHIP,
                       objective: str = "maxmin", weight: float = 1.0) -> Submodel:
    target.validate(panel)
    pa = np.asarray(target.marginals_A, float)
    pb = pa * (1.0 + np.asarray(target.lift_targets, float))
    if np.any(pb > 1) or np.any(pb < 0):
        raise ConstructionError(f"lifted group-B marginals leave [0, 1]: {pb.tolist()}")
    eta_A = construct_group(pa, membership, objective)
    eta_B = construct_group(pb, membership, objective)
    label = "false=" + ",".join(str(k + 1) for k in sorted(target.false_set))
    sub = Submodel(eta_A, eta_B, target.false_set, weight, label)
    MultinomialLiftModel(membership).truth_flags(sub, panel)
    return sub


def false_sets(K: int, sizes=None):
    """All false sets with size in ``sizes`` (default 1..K-1), by size then lexicographically."""
    sizes = range(1, K) if sizes is None else sorted(sizes)
    for size in sizes:
        yield from (frozenset(c) for c in itertools.combinations(range(K), size))


def build_psi_all(marginals_A, effect: float = 0.10, panel: MetricPanel | None = None,
                  membership=OPTIMIZELY_MEMBERSHIP, sizes=None, objective: str = "maxmin") -> PsiMixture:
    """Equal mixture over every false set: lift 0 on false metrics, ``effect`` elsewhere."""
    if not effect > 0:
        raise ValidationError("effect must be positive")
    K = len(marginals_A)
    panel = panel or MetricPanel.superiority(K)
    subs = []
    for fs in false_sets(K, sizes):
        lifts = tuple(0.0 if k in fs else effect for k in range(K))
        subs.append(construct_submodel(SubmodelTarget(tuple(marginals_A), lifts, fs), panel,
                                       membership, objective))
    psi = PsiMixture(tuple(subs), np.ones(len(subs)))
    check_nontrivial(psi, K)
    return psi


def build_psi_30(marginals_A, effect: float = 0.10, **kw) -> PsiMixture:
    """The 30-submodel mixture for five metrics."""
    if len(marginals_A) != 5:
        raise ValidationError("build_psi_30 expects five marginals")
    return build_psi_all(marginals_A, effect, **kw)
