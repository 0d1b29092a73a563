"""Simulated sampling distributions of posterior probabilities.

:func:`build_panel` draws one dataset per (submodel, repetition), computes
the posterior probability of every alternative and returns a
:class:`ProbPanel`.  Rows are ordered submodel-major and each row uses its
own random stream, so the panel is identical for any worker count.
"""

from __future__ import annotations

import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from . import rng as rngmod
from .model import (
    AllocationPlan,
    DatasetCounts,
    IndependentBinomialLiftModel,
    LiftModel,
    MetricPanel,
    MultinomialLiftModel,
    PsiMixture,
    Submodel,
    ValidationError,
    split_allocation,
)
from .posterior import PosteriorConfig

#: Number of :func:`build_panel` calls in this process (instrumentation).
SIMULATION_COUNT = 0


@dataclass(eq=False)
class ProbPanel:
    """m x K estimated posterior probabilities with row metadata.

    ``weights`` are per-row mixture weights normalised to mean 1; they are
    all ones for an equally weighted mixture with equal repetitions.
    """

    probs: np.ndarray
    submodel_index: np.ndarray
    truth: np.ndarray
    n: int
    weights: np.ndarray | None = None
    logits: np.ndarray | None = None
    seed_record: dict = field(default_factory=dict)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, float)
        m, K = self.probs.shape
        self.submodel_index = np.asarray(self.submodel_index, np.int64)
        self.truth = np.asarray(self.truth, bool)
        if self.truth.shape != (m, K) or self.submodel_index.shape != (m,):
            raise ValidationError("panel metadata shapes disagree with probs")
        if self.weights is None:
            self.weights = np.ones(m)
        if self.logits is None:
            self.logits = logit(self.probs)

    @property
    def m(self) -> int:
        return self.probs.shape[0]

    @property
    def K(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def from_logits(cls, logits, submodel_index, truth, n, weights=None, seed_record=None):
        logits = np.asarray(logits, float)
        return cls(expit(logits), submodel_index, truth, n, weights, logits, dict(seed_record or {}))

    def to_csv(self) -> str:
        """Long-format table ``rep,submodel,n,k,prob,logit,truth`` at 17 significant digits."""
        buf = io.StringIO()
        buf.write("rep,submodel,n,k,prob,logit,truth\n")
        for r in range(self.m):
            s = int(self.submodel_index[r])
            for k in range(self.K):
                buf.write(f"{r},{s},{self.n},{k},{self.probs[r, k]:.17g},{self.logits[r, k]:.17g},"
                          f"{int(self.truth[r, k])}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ProbPanel":
        rows = np.genfromtxt(io.StringIO(text), delimiter=",", names=True, dtype=None, encoding=None)
        rows = np.atleast_1d(rows)
        m = int(rows["rep"].max()) + 1
        K = int(rows["k"].max()) + 1
        probs = np.empty((m, K))
        logits = np.empty((m, K))
        truth = np.empty((m, K), bool)
        sub = np.empty(m, np.int64)
        r, k = rows["rep"].astype(int), rows["k"].astype(int)
        probs[r, k] = rows["prob"]
        logits[r, k] = rows["logit"]
        truth[r, k] = rows["truth"].astype(bool)
        sub[r] = rows["submodel"]
        return cls(probs, sub, truth, int(rows["n"][0]), logits=logits)


def sample_dataset(model: LiftModel, submodel: Submodel, plan: AllocationPlan, stream) -> DatasetCounts:
    n_A, n_B = split_allocation(plan)
    return model.sample_dataset(submodel, n_A, n_B, stream)


def posterior_prob(model: LiftModel, counts: DatasetCounts, panel: MetricPanel, cfg: PosteriorConfig, stream):
    """Posterior probability of each alternative, clipped away from 0 and 1."""
    probs, _ = model.posterior_prob(counts, panel, cfg, stream)
    return probs


def _simulate_rows(args):
    model, submodels, hypotheses, plan, cfg, seed, phase, jobs = args
    out = np.empty((len(jobs), model.K))
    notes = []
    for i, (s, r) in enumerate(jobs):
        st = rngmod.stream(seed, phase, s, r)
        data = sample_dataset(model, submodels[s], plan, st)
        out[i], info = model.posterior_prob(data, hypotheses, cfg, st)
        if info:
            notes.append({"submodel": s, "rep": r, **info})
    return out, notes


def _run_jobs(task_args, jobs, workers: int):
    if workers <= 1 or len(jobs) < 2:
        return [_simulate_rows(task_args + (jobs,))]
    n_chunks = min(len(jobs), workers * 4)
    bounds = np.linspace(0, len(jobs), n_chunks + 1).astype(int)
    chunks = [jobs[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_simulate_rows, [task_args + (c,) for c in chunks]))


def build_panel(psi: PsiMixture, panel: MetricPanel, plan: AllocationPlan, cfg: PosteriorConfig,
                reps_per_submodel: int, seed: int, model: LiftModel | None = None,
                phase: int = rngmod.PHASE_N0, workers: int = 1) -> ProbPanel:
    """Simulate ``reps_per_submodel`` datasets per submodel at ``plan.n``.

    Each submodel gets the same number of rows; unequal mixture weights
    enter through the row weights.
    """
    global SIMULATION_COUNT
    if reps_per_submodel < 1:
        raise ValidationError("reps_per_submodel must be >= 1")
    model = model or MultinomialLiftModel()
    truth_rows = np.array([model.truth_flags(s, panel) for s in psi.submodels])
    n_sub = len(psi)
    jobs = [(s, r) for s in range(n_sub) for r in range(reps_per_submodel)]
    task = (model, psi.submodels, panel, plan, cfg, seed, phase)
    results = _run_jobs(task, jobs, workers)
    probs = np.concatenate([r[0] for r in results])
    notes = [n for r in results for n in r[1]]
    sub_index = np.repeat(np.arange(n_sub), reps_per_submodel)
    weights = psi.weights[sub_index] * n_sub
    SIMULATION_COUNT += 1
    record = rngmod.provenance(seed, phase) | {
        "model": model.name, "method": cfg.method, "draws": cfg.draws, "reps_per_submodel": reps_per_submodel,
    }
    if notes:
        record["numeric_warnings"] = notes
    return ProbPanel(probs, sub_index, truth_rows[sub_index], plan.n, weights, seed_record=record)


def build_panel_independent(psi: PsiMixture, panel: MetricPanel, plan: AllocationPlan, cfg: PosteriorConfig,
                            reps_per_submodel: int, seed: int, membership=None, **kw) -> ProbPanel:
    """As :func:`build_panel` with independent binomial outcomes and Beta posteriors."""
    model = IndependentBinomialLiftModel() if membership is None else IndependentBinomialLiftModel(membership)
    return build_panel(psi, panel, plan, cfg, reps_per_submodel, seed, model=model, **kw)


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
