"""Workflows behind the CLI: design reports, verification, Bonferroni baseline, false-set-size ladder."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import __version__
from . import rng as rngmod
from .config import DesignConfig
from .model import AllocationPlan, split_allocation, total_from_group_a
from .oc import ThresholdScheme, evaluate, validate_gamma
from .proxy import ProxyRow, asymptotic_variance, limiting_slope
from .search import DesignRecommendation, run_design
from .simulate import build_panel


def fmt17(x) -> str:
    return f"{x:.17g}"


def design(cfg: DesignConfig, scheme: ThresholdScheme | None = None, psi=None, panel0=None) -> DesignRecommendation:
    psi = psi or cfg.mixture()
    return run_design(
        psi, cfg.metric_panel(), cfg.posterior_config(), scheme or cfg.threshold_scheme(), cfg.q, cfg.beta,
        cfg.n0_total, cfg.c, cfg.seed, cfg.reps_for(len(psi)), cfg.lift_model(), cfg.workers, panel0=panel0,
    )


def environment(cfg: DesignConfig) -> dict:
    return {"version": __version__, "config_hash": cfg.config_hash()}


def design_report(cfg: DesignConfig, rec: DesignRecommendation, verification: dict | None = None) -> dict:
    out = {"recommendation": rec.to_dict(), "environment": environment(cfg), "config": cfg.to_dict()}
    out["config"].pop("workers")
    if verification is not None:
        out["verification"] = verification
    return out


def dumps(obj) -> str:
    """Deterministic JSON with floats at 17 significant digits."""
    return json.dumps(_round17(obj), sort_keys=True, indent=2) + "\n"


def _round17(obj):
    if isinstance(obj, float):
        return float(fmt17(obj)) if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {k: _round17(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round17(v) for v in obj]
    if isinstance(obj, np.generic):
        return _round17(obj.item())
    if isinstance(obj, np.ndarray):
        return _round17(obj.tolist())
    return obj


def trace_csv(trace: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "basis", "feasible", "fdr_hat", "power_hat", "gamma"])
    for row in trace:
        w.writerow([row["n"], row["basis"], int(row["feasible"]), fmt17(row["fdr_hat"]), fmt17(row["power_hat"]),
                    ";".join(fmt17(g) for g in row["gamma"])])
    return buf.getvalue()


def read_trace_csv(text: str) -> list:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({"n": int(r["n"]), "basis": r["basis"], "feasible": bool(int(r["feasible"])),
                     "fdr_hat": float(r["fdr_hat"]), "power_hat": float(r["power_hat"]),
                     "gamma": [float(g) for g in r["gamma"].split(";")]})
    return rows


def verify(cfg: DesignConfig, n: int, gamma, reps_per_submodel: int, seed: int | None = None, psi=None) -> dict:
    """Fresh simulation at total ``n`` scored at fixed thresholds, with Monte Carlo standard errors."""
    psi = psi or cfg.mixture()
    panel = cfg.metric_panel()
    g = validate_gamma(gamma, panel.K)
    seed = cfg.seed if seed is None else seed
    P = build_panel(psi, panel, AllocationPlan(cfg.c, n), cfg.posterior_config(), reps_per_submodel, seed,
                    cfg.lift_model(), rngmod.PHASE_VERIFY, cfg.workers)
    est = evaluate(P, g)
    n_A, n_B = split_allocation(AllocationPlan(cfg.c, n))
    return {"n": n, "n_A": n_A, "n_B": n_B, "gamma": g.tolist(), "m": P.m, "seed": seed,
            "fdr_hat": est.fdr_hat, "fdr_mcse": est.fdr_mcse,
            "power_hat": est.power_hat, "power_mcse": est.power_mcse}


@dataclass
class BaselineResult:
    n_A: int
    gamma_eff: float
    power_hat: float
    power_mcse: float
    probes: list
    n_A_mcse: float = float("nan")

    def to_dict(self):
        return {"n_A": self.n_A, "gamma_eff": self.gamma_eff, "power_hat": self.power_hat,
                "power_mcse": self.power_mcse, "n_A_mcse": self.n_A_mcse, "probes": self.probes}


def baseline_bonferroni(cfg: DesignConfig, alpha_total: float = 0.05, psi=None) -> BaselineResult:
    """Smallest group-A size reaching average power ``1 - beta`` at ``gamma = 1 - alpha/K``.

    Every probe is a fresh simulation; probes share the random streams, so
    power is compared across n with common random numbers.
    """
    if not 0 < alpha_total < 1:
        raise ValueError("alpha_total must lie in (0, 1)")
    psi = psi or cfg.mixture()
    hyp = cfg.metric_panel()
    gamma = 1.0 - alpha_total / hyp.K
    post, model, reps = cfg.posterior_config(), cfg.lift_model(), cfg.reps_for(len(psi))
    cache: dict[int, tuple] = {}

    def power(n_A):
        if n_A not in cache:
            n = total_from_group_a(n_A, cfg.c)
            P = build_panel(psi, hyp, AllocationPlan(cfg.c, n), post, reps, cfg.seed, model,
                            rngmod.PHASE_BASELINE, cfg.workers)
            est = evaluate(P, np.full(hyp.K, gamma))
            cache[n_A] = (est.power_hat, est.power_mcse)
        return cache[n_A][0]

    target = 1.0 - cfg.beta
    hi = int(cfg.n0_A)
    if power(hi) >= target:
        lo = hi
        while lo > 1 and power(lo) >= target:
            hi, lo = lo, max(1, lo // 2)
        if power(lo) >= target:
            hi = lo
    else:
        lo = hi
        while power(hi) < target:
            lo, hi = hi, hi * 2
            if hi > 10**9:
                raise RuntimeError("Bonferroni baseline: power target unreachable")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if power(mid) >= target:
            hi = mid
        else:
            lo = mid
    probes = [{"n_A": k, "power_hat": v[0], "power_mcse": v[1]} for k, v in sorted(cache.items())]
    # Sample-size MCSE from the power slope between the widest probes around n_A.
    below = [k for k in cache if k < hi]
    above = [k for k in cache if k > hi]
    n_mcse = float("nan")
    if below and above:
        a, b = max(below), min(above)
        slope = (cache[b][0] - cache[a][0]) / (b - a)
        n_mcse = cache[hi][1] / slope if slope > 0 else float("inf")
    return BaselineResult(hi, gamma, cache[hi][0], cache[hi][1], probes, n_mcse)


def table1(cfg: DesignConfig, box: float = 0.05) -> list[dict]:
    """Designs for |false set| = 1..K-1 separately and combined (common and boxed thresholds)."""
    full = cfg.mixture()
    K = cfg.metric_panel().K
    rows = []
    for size in range(1, K):
        sub = full.restrict([size])
        rec = design(cfg, ThresholdScheme("common"), psi=sub)
        rows.append({"psi": f"|false|={size}", "scheme": "common", **_row(rec)})
    rec = design(cfg, ThresholdScheme("common"), psi=full)
    rows.append({"psi": "combined", "scheme": "common", **_row(rec)})
    rec_b = design(cfg, ThresholdScheme("boxed", box), psi=full)
    rows.append({"psi": "combined", "scheme": f"boxed({box:g})", **_row(rec_b)})
    return rows


def n_A_mcse(rec: DesignRecommendation) -> float:
    """Sample-size MCSE of a recommendation in group-A units."""
    return rec.mcse.get("n", float("nan")) * rec.n_A / rec.n


def _row(rec: DesignRecommendation) -> dict:
    return {"n_A": rec.n_A, "n": rec.n, "gamma": [float(g) for g in rec.gamma],
            "fdr_hat": rec.fdr_hat, "power_hat": rec.power_hat, "n_A_mcse": n_A_mcse(rec)}


def table1_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["psi", "scheme", "n_A", "n", "fdr_hat", "power_hat", "n_A_mcse", "gamma"])
    for r in rows:
        w.writerow([r["psi"], r["scheme"], r["n_A"], r["n"], fmt17(r["fdr_hat"]), fmt17(r["power_hat"]),
                    fmt17(r["n_A_mcse"]), ";".join(fmt17(g) for g in r["gamma"])])
    return buf.getvalue()


def proxy_check(cfg: DesignConfig, n: float = 1e5, rel_step: float = 1e-3, u: float = 0.5) -> list[dict]:
    """Theoretical limiting slopes against central finite differences of the proxy logit at ``n``."""
    psi = cfg.mixture()
    hyp = cfg.metric_panel()
    model = cfg.lift_model()
    rows = []
    h = n * rel_step
    for s, sub in enumerate(psi.submodels):
        pr = ProxyRow(sub, hyp, cfg.c, np.full(hyp.K, u), model)
        fd = (pr.logit(n + h) - pr.logit(n - h)) / (2 * h)
        for k, hk in enumerate(hyp.hypotheses):
            slope = limiting_slope(pr.theta[k], pr.avar[k], hk)
            rel = abs(fd[k] - slope) / abs(slope) if slope != 0 else float("nan")
            rows.append({"submodel": s, "label": sub.label, "k": k, "theta": float(pr.theta[k]),
                         "avar": float(pr.avar[k]), "limiting_slope": slope, "fd_slope": float(fd[k]),
                         "rel_error": rel})
    return rows


def rows_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: fmt17(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def submodels_json(cfg: DesignConfig) -> dict:
    psi = cfg.mixture()
    model = cfg.lift_model()
    out = []
    for i, s in enumerate(psi.submodels):
        out.append({
            "index": i, "label": s.label, "false_set": sorted(k + 1 for k in s.false_set),
            "weight": float(psi.weights[i]), "eta_A": s.params_A.tolist(), "eta_B": s.params_B.tolist(),
            "marginals_A": model.marginals(s.params_A).tolist(), "marginals_B": model.marginals(s.params_B).tolist(),
            "theta": model.theta(s).tolist(),
            "avar": asymptotic_variance(s, cfg.c, model).tolist(),
        })
    return {"kind": "explicit", "submodels": out}
