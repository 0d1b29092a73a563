"""Discovery classification, FDR / average-power estimates and threshold selection.

A discovery for metric k is ``prob >= gamma_k``.  Per repetition r with v_r
false discoveries, s_r true discoveries and t_r true alternatives,

    FDR_hat   = mean_r  v_r / max(v_r + s_r, 1)
    power_hat = mean_r  s_r / max(t_r, 1)

(weighted means when the panel carries row weights).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .model import ValidationError

#: Slack on the FDR bound absorbing summation-order rounding.
FDR_SLACK = 1e-12
GAMMA_MIN = 0.5


@dataclass(frozen=True)
class ClassificationCounts:
    v: np.ndarray
    s: np.ndarray
    t: np.ndarray


@dataclass(frozen=True)
class OcEstimates:
    fdr_hat: float
    power_hat: float
    fdr_mcse: float = float("nan")
    power_mcse: float = float("nan")


@dataclass(frozen=True)
class ThresholdChoice:
    """Selected thresholds with their estimates; ``feasible=False`` when no gamma meets the bound."""

    gamma: np.ndarray
    fdr_hat: float
    power_hat: float
    feasible: bool

    @property
    def effective_power(self) -> float:
        return self.power_hat if self.feasible else 0.0


def validate_gamma(gamma, K: int) -> np.ndarray:
    g = np.broadcast_to(np.asarray(gamma, float), (K,)).copy()
    if np.any(g < GAMMA_MIN) or np.any(g >= 1.0):
        raise ValidationError(f"thresholds must lie in [0.5, 1): {g.tolist()}")
    return g


def _arrays(panel):
    return panel.probs, panel.truth, panel.weights


def classify(panel, gamma) -> ClassificationCounts:
    probs, truth, _ = _arrays(panel)
    g = np.asarray(gamma, float)
    if g.ndim == 0:
        g = np.full(probs.shape[1], float(g))
    if g.shape != (probs.shape[1],):
        raise ValidationError(f"gamma has {g.shape[0]} entries, panel has {probs.shape[1]} metrics")
    disc = probs >= g
    return ClassificationCounts((disc & ~truth).sum(1), (disc & truth).sum(1), truth.sum(1))


def estimate_oc(counts: ClassificationCounts, weights=None) -> OcEstimates:
    v, s, t = (np.asarray(a, float) for a in (counts.v, counts.s, counts.t))
    if v.shape[0] < 1:
        raise ValidationError("need at least one repetition")
    fdp = v / np.maximum(v + s, 1)
    tpp = s / np.maximum(t, 1)
    w = np.ones_like(v) if weights is None else np.asarray(weights, float)
    W = w.sum()
    fdr, pw = float((w * fdp).sum() / W), float((w * tpp).sum() / W)
    m = v.shape[0]
    if m > 1:
        # Standard error of a weighted mean of independent rows.
        fdr_se = float(np.sqrt(((w * (fdp - fdr)) ** 2).sum()) / W)
        pw_se = float(np.sqrt(((w * (tpp - pw)) ** 2).sum()) / W)
    else:
        fdr_se = pw_se = float("nan")
    return OcEstimates(fdr, pw, fdr_se, pw_se)


def evaluate(panel, gamma) -> OcEstimates:
    return estimate_oc(classify(panel, gamma), panel.weights)


# Common threshold ---------------------------------------------------------

def common_profile(panel):
    """FDR_hat and power_hat for a common threshold at each distinct probability.

    Returns ``(values, fdr, power)`` with ``values`` ascending; entry i is the
    operating point of ``gamma = values[i]``.  Built from per-row increments
    in one sort, so every candidate is scanned exactly.
    """
    probs, truth, w = _arrays(panel)
    m, K = probs.shape
    W = w.sum()
    order = np.argsort(-probs, axis=1, kind="stable")
    p_sorted = np.take_along_axis(probs, order, axis=1)
    tr_sorted = np.take_along_axis(truth, order, axis=1)
    v = np.cumsum(~tr_sorted, axis=1)
    s = np.cumsum(tr_sorted, axis=1)
    ratio = v / np.maximum(v + s, 1)
    d_fdr = np.diff(np.c_[np.zeros(m), ratio], axis=1) * w[:, None]
    t = truth.sum(1)
    d_pow = tr_sorted / np.maximum(t, 1)[:, None] * w[:, None]

    flat_p = p_sorted.ravel()
    glob = np.argsort(-flat_p, kind="stable")
    fp = flat_p[glob]
    cf = np.cumsum(d_fdr.ravel()[glob]) / W
    cp = np.cumsum(d_pow.ravel()[glob]) / W
    # Keep the last position of each run of equal values (all ties included).
    last = np.r_[fp[1:] != fp[:-1], True]
    vals, fdr, pw = fp[last], cf[last], cp[last]
    return vals[::-1], np.clip(fdr[::-1], 0, 1), np.clip(pw[::-1], 0, 1)


def common_candidates(panel):
    """Candidate common thresholds (distinct probabilities in [0.5, 1) and 0.5) with their OCs."""
    vals, fdr, pw = common_profile(panel)
    inside = (vals >= GAMMA_MIN) & (vals < 1.0)
    cand, cf, cp = vals[inside], fdr[inside], pw[inside]
    if cand.size == 0 or cand[0] > GAMMA_MIN:
        # gamma = 0.5 discovers exactly the cells at or above the smallest in-range value.
        above = vals >= GAMMA_MIN
        if above.any():
            j = np.flatnonzero(above)[0]
            f0, p0 = fdr[j], pw[j]
        else:
            f0 = p0 = 0.0
        cand, cf, cp = np.r_[GAMMA_MIN, cand], np.r_[f0, cf], np.r_[p0, cp]
    return cand, cf, cp


def optimize_gamma_common(panel, q: float) -> ThresholdChoice:
    """Smallest candidate common threshold with FDR_hat <= q."""
    if not 0 < q < 1:
        raise ValidationError("q must lie in (0, 1)")
    cand, fdr, pw = common_candidates(panel)
    K = panel.probs.shape[1]
    ok = np.flatnonzero(fdr <= q + FDR_SLACK)
    if ok.size == 0:
        i = cand.size - 1
        return ThresholdChoice(np.full(K, cand[i]), float(fdr[i]), float(pw[i]), False)
    i = ok[0]
    return ThresholdChoice(np.full(K, cand[i]), float(fdr[i]), float(pw[i]), True)


def scan_table(panel) -> str:
    """Common-threshold scan as CSV ``gamma,fdr_hat,power_hat``."""
    cand, fdr, pw = common_candidates(panel)
    buf = io.StringIO()
    buf.write("gamma,fdr_hat,power_hat\n")
    for g, f, p in zip(cand, fdr, pw):
        buf.write(f"{g:.17g},{f:.17g},{p:.17g}\n")
    return buf.getvalue()


# Boxed thresholds ---------------------------------------------------------

class _RowState:
    """Row-level discovery counts for fast pairwise re-evaluation."""

    def __init__(self, panel):
        self.probs, self.truth, w = _arrays(panel)
        self.w = w / w.sum()
        self.t = self.truth.sum(1)
        self.inv_t = 1.0 / np.maximum(self.t, 1)

    def evaluate(self, gamma):
        d = self.probs >= gamma
        v = (d & ~self.truth).sum(1)
        s = (d & self.truth).sum(1)
        return float((self.w * v / np.maximum(v + s, 1)).sum()), float((self.w * s * self.inv_t).sum())

    def pair_surface(self, gamma, j, k, grid_j, grid_k):
        """FDR_hat and power_hat over ``grid_j x grid_k`` with the other thresholds fixed."""
        probs, truth, w = self.probs, self.truth, self.w
        others = np.ones(probs.shape[1], bool)
        others[[j, k]] = False
        d = (probs >= gamma) & others
        v0 = (d & ~truth).sum(1)
        s0 = (d & truth).sum(1)
        fj, fk = ~truth[:, j], ~truth[:, k]

        def fdp(dj, dk):
            v = v0 + dj * fj + dk * fk
            return v / np.maximum(v0 + s0 + dj + dk, 1)

        f00, f10, f01, f11 = fdp(0, 0), fdp(1, 0), fdp(0, 1), fdp(1, 1)
        # Row discovered at grid position i iff grid[i] <= prob, i.e. i < idx.
        ij = np.searchsorted(grid_j, probs[:, j], side="right")
        ik = np.searchsorted(grid_k, probs[:, k], side="right")
        Gj, Gk = grid_j.size, grid_k.size

        def tail1(idx, vals, G):
            h = np.bincount(idx, weights=vals, minlength=G + 1)
            return np.cumsum(h[::-1])[::-1][1:]  # entry i: sum over idx > i

        base_f = (w * f00).sum()
        base_p = (w * s0 * self.inv_t).sum()
        Fj = tail1(ij, w * (f10 - f00), Gj)
        Fk = tail1(ik, w * (f01 - f00), Gk)
        Pj = tail1(ij, w * truth[:, j] * self.inv_t, Gj)
        Pk = tail1(ik, w * truth[:, k] * self.inv_t, Gk)
        inter = w * (f11 - f10 - f01 + f00)
        H = np.bincount(ij * (Gk + 1) + ik, weights=inter, minlength=(Gj + 1) * (Gk + 1)).reshape(Gj + 1, Gk + 1)
        S = np.cumsum(np.cumsum(H[::-1, ::-1], axis=0), axis=1)[::-1, ::-1]
        fdr = base_f + Fj[:, None] + Fk[None, :] + S[1:, 1:]
        pw = base_p + Pj[:, None] + Pk[None, :]
        return fdr, pw


def _subsample(values, current, limit):
    if values.size <= limit:
        return values
    idx = np.unique(np.linspace(0, values.size - 1, limit).round().astype(int))
    return np.union1d(values[idx], current)


def _window(values, current, limit):
    if values.size <= limit:
        return values
    c = np.searchsorted(values, current)
    lo = max(0, min(c - limit // 2, values.size - limit))
    return np.union1d(values[lo:lo + limit], current)


def _pool(base, lo, hi, box):
    """Pair candidates: probabilities, probabilities +/- box and the admissible edges.

    A discovery pattern holds for gamma in a left-open interval between
    consecutive probabilities, so within the box band some optimal pair has
    each coordinate at a probability, at the edge of its range, or one box
    width from the other coordinate.
    """
    edges = [e for e in (lo, hi) if GAMMA_MIN <= e < 1.0]
    extra = np.r_[edges, np.asarray(edges) - box, np.asarray(edges) + box] if edges else np.empty(0)
    pts = base[(base >= lo) & (base <= hi)]
    if extra.size:
        pts = np.union1d(pts, extra[(extra >= lo) & (extra <= hi)])
    return pts[(pts >= GAMMA_MIN) & (pts < 1.0)]


def optimize_gamma_boxed(panel, q: float, box: float = 0.05, grid_limit: int = 400,
                         max_passes: int = 50) -> ThresholdChoice:
    """Thresholds maximising power_hat subject to FDR_hat <= q and ``max - min <= box``.

    Starts from the common-threshold solution and performs block coordinate
    ascent over metric pairs.  Each block step optimises two thresholds
    jointly over a grid of candidate values (see :func:`_pool`, thinned to
    ``grid_limit`` values per axis when larger)
    with the others held fixed; a step is taken only if power strictly
    improves.  A second round repeats this on full-resolution windows around
    the current point.  With two metrics and at most ``grid_limit``
    candidates the first step is a global search.
    """
    if box < 0:
        raise ValidationError("box must be nonnegative")
    start = optimize_gamma_common(panel, q)
    K = panel.probs.shape[1]
    if box == 0 or K == 1:
        return start
    state = _RowState(panel)
    cand, _, _ = common_candidates(panel)
    base = np.unique(np.r_[cand, cand - box, cand + box])
    gamma = start.gamma.copy()
    best_f, best_p, feasible = start.fdr_hat, start.power_hat, start.feasible
    # Surface and direct sums differ by rounding; real gains are >= min row weight / K.
    tol = 1e-10

    for chooser in (_subsample, _window):
        for _ in range(max_passes):
            improved = False
            for j in range(K):
                for k in range(j + 1, K):
                    rest = np.delete(gamma, [j, k])
                    lo = GAMMA_MIN if rest.size == 0 else max(GAMMA_MIN, rest.max() - box - 1e-12)
                    hi = 1.0 if rest.size == 0 else rest.min() + box + 1e-12
                    pool = _pool(base, lo, hi, box)
                    if pool.size == 0:
                        continue
                    gj = chooser(pool, gamma[j], grid_limit)
                    gk = chooser(pool, gamma[k], grid_limit)
                    fdr, pw = state.pair_surface(gamma, j, k, gj, gk)
                    mask = (fdr <= q + FDR_SLACK) & (np.abs(gj[:, None] - gk[None, :]) <= box + 1e-12)
                    if not mask.any():
                        continue
                    score = np.where(mask, pw, -np.inf)
                    top = score.max()
                    if feasible and top <= best_p + tol:
                        continue
                    # Ties: lowest thresholds first (row-major order of ascending grids).
                    a, b = np.unravel_index(np.flatnonzero(score.ravel() == top)[0], score.shape)
                    gamma[j], gamma[k] = gj[a], gk[b]
                    best_f, best_p = state.evaluate(gamma)
                    feasible = True
                    improved = True
            if not improved:
                break
    best_f, best_p = state.evaluate(gamma)
    return ThresholdChoice(gamma, best_f, best_p, feasible and best_f <= q + FDR_SLACK)


@dataclass(frozen=True)
class ThresholdScheme:
    """``common`` (one threshold for all metrics) or ``boxed`` (spread limited by ``box``)."""

    name: str = "common"
    box: float = 0.05

    def __post_init__(self):
        if self.name not in ("common", "boxed"):
            raise ValidationError(f"unknown threshold scheme {self.name!r}")

    def select(self, panel, q: float) -> ThresholdChoice:
        if self.name == "common":
            return optimize_gamma_common(panel, q)
        return optimize_gamma_boxed(panel, q, self.box)
