"""Command line front end.

    abfdr design --config cfg.json --seed 7 --out run/
    abfdr verify --config cfg.json --n 26656 --gamma 0.9411 --reps 1000
    abfdr construct-models --config cfg.json --out run/
    abfdr proxy-check --config cfg.json
    abfdr baseline --config cfg.json --alpha 0.05
    abfdr emit-table1 --config cfg.json --out run/

Exit codes: 0 success, 2 configuration error, 3 design range exhausted,
4 other numerical or validation failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import report
from .config import ConfigError, DesignConfig
from .lp import ConstructionError, InfeasibleLP
from .model import ValidationError
from .search import RangeExhausted

log = logging.getLogger("abfdr")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abfdr", description="Bayesian multi-metric A/B test design")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", type=Path)
        return sp

    d = common(sub.add_parser("design", help="recommend n and thresholds"))
    d.add_argument("--scheme", choices=["common", "boxed"])
    d.add_argument("--box", type=float)
    d.add_argument("--verify-reps", type=int, help="also verify at the recommendation with this many reps/submodel")

    v = common(sub.add_parser("verify", help="estimate FDR and power at fixed (n, gamma)"))
    v.add_argument("--n", type=int, required=True, help="total sample size")
    v.add_argument("--gamma", required=True, help="one threshold, or K comma-separated")
    v.add_argument("--reps", type=int, help="reps per submodel (default: config)")

    common(sub.add_parser("construct-models", help="solve the submodel LPs and write them out"))

    x = common(sub.add_parser("proxy-check", help="limiting vs finite-difference proxy slopes"))
    x.add_argument("--n", type=float, default=1e5)

    b = common(sub.add_parser("baseline", help="Bonferroni-style comparison design"))
    b.add_argument("--alpha", type=float, default=0.05)

    t = common(sub.add_parser("emit-table1", help="designs by false-set size and scheme"))
    t.add_argument("--box", type=float, default=0.05)
    return p


def _load(args) -> DesignConfig:
    cfg = DesignConfig.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    scheme = dict(cfg.scheme)
    if getattr(args, "scheme", None):
        scheme["name"] = args.scheme
    if args.command == "design" and args.box is not None:
        scheme["box"] = args.box
    if scheme != cfg.scheme:
        changes["scheme"] = scheme
    return cfg.replace(**changes) if changes else cfg


def _write(out: Path | None, name: str, text: str) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    with open(out / name, "w", newline="\n") as fh:
        fh.write(text)


def _g(x) -> str:
    return f"{x:.4g}"


def cmd_design(args, cfg):
    try:
        rec = report.design(cfg)
    except RangeExhausted as exc:
        _write(args.out, "trace.csv", report.trace_csv(exc.diagnostics.get("trace", [])))
        raise
    ver = None
    if args.verify_reps:
        ver = report.verify(cfg, rec.n, rec.gamma, args.verify_reps)
    _write(args.out, "report.json", report.dumps(report.design_report(cfg, rec, ver)))
    _write(args.out, "trace.csv", report.trace_csv(rec.trace))
    print(f"n_A={rec.n_A} n_B={rec.n_B} n={rec.n} gamma=[{', '.join(_g(g) for g in rec.gamma)}] "
          f"fdr_hat={_g(rec.fdr_hat)} power_hat={_g(rec.power_hat)} (n0={rec.n0}, n1={rec.n1})")
    if ver:
        print(f"verification: fdr_hat={_g(ver['fdr_hat'])} (mcse {_g(ver['fdr_mcse'])}) "
              f"power_hat={_g(ver['power_hat'])} (mcse {_g(ver['power_mcse'])})")


def cmd_verify(args, cfg):
    try:
        gamma = [float(g) for g in args.gamma.split(",")]
    except ValueError:
        raise ConfigError("--gamma", f"not a number list: {args.gamma!r}") from None
    if len(gamma) == 1:
        gamma = gamma * cfg.metric_panel().K
    reps = args.reps or cfg.reps_for(len(cfg.mixture()))
    res = report.verify(cfg, args.n, gamma, reps)
    _write(args.out, "verify.json", report.dumps({"verification": res, "environment": report.environment(cfg)}))
    print(f"n={res['n']} (n_A={res['n_A']}) m={res['m']} fdr_hat={_g(res['fdr_hat'])} (mcse {_g(res['fdr_mcse'])}) "
          f"power_hat={_g(res['power_hat'])} (mcse {_g(res['power_mcse'])})")


def cmd_construct(args, cfg):
    doc = report.submodels_json(cfg)
    _write(args.out, "submodels.json", report.dumps(doc))
    for s in doc["submodels"]:
        print(f"{s['index']:2d} false={s['false_set']} min_eta_A={_g(min(s['eta_A']))} "
              f"theta=[{', '.join(_g(t) for t in s['theta'])}]")


def cmd_proxy(args, cfg):
    rows = report.proxy_check(cfg, args.n)
    _write(args.out, "proxy_check.csv", report.rows_csv(rows))
    worst = max((r for r in rows if r["limiting_slope"] != 0), key=lambda r: r["rel_error"], default=None)
    print(f"{len(rows)} cells at n={args.n:.4g}")
    if worst:
        print(f"largest relative slope error {_g(worst['rel_error'])} (submodel {worst['submodel']}, metric {worst['k'] + 1})")


def cmd_baseline(args, cfg):
    res = report.baseline_bonferroni(cfg, args.alpha)
    _write(args.out, "baseline.json", report.dumps({"baseline": res.to_dict(), "environment": report.environment(cfg)}))
    print(f"n_A={res.n_A} gamma={_g(res.gamma_eff)} power_hat={_g(res.power_hat)} (mcse {_g(res.power_mcse)})")


def cmd_table1(args, cfg):
    rows = report.table1(cfg, args.box)
    _write(args.out, "table1.csv", report.table1_csv(rows))
    for r in rows:
        print(f"{r['psi']:<12} {r['scheme']:<12} n_A={r['n_A']:<7d} gamma=[{', '.join(_g(g) for g in r['gamma'])}]")


COMMANDS = {"design": cmd_design, "verify": cmd_verify, "construct-models": cmd_construct,
            "proxy-check": cmd_proxy, "baseline": cmd_baseline, "emit-table1": cmd_table1}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _load(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error in field '{exc.field}': {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error in field '--config': {exc}", file=sys.stderr)
        return 2
    except RangeExhausted as exc:
        diag = {k: v for k, v in exc.diagnostics.items() if k != "trace"}
        print(f"design range exhausted: {exc} {diag}", file=sys.stderr)
        for row in exc.diagnostics.get("trace", [])[-5:]:
            print(f"  n={row['n']} fdr_hat={_g(row['fdr_hat'])} power_hat={_g(row['power_hat'])}", file=sys.stderr)
        return 3
    except (ValidationError, ConstructionError, InfeasibleLP, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
