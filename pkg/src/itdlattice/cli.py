"""Command-line entry point: ``itdlattice <subcommand> ...``.

Exit codes: 0 success, 2 bad configuration, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .kernel_metric import DiscreteKernel, itd, sup_distance
from .lattice import LatticeConfig
from .markets import load_config
from .transport import DiscreteMeasure, GroundCost

log = logging.getLogger("itdlattice")

EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ValueError(f"cannot read {path}: {e}") from None


def _lattice_config(args, base: dict) -> LatticeConfig:
    cfg = LatticeConfig(**base.get("lattice", {}))
    over = {}
    if args.selector is not None:
        over["selector"] = args.selector
    if args.budget is not None:
        over["budget"] = args.budget
    if args.particles is not None:
        over["particles"] = args.particles
    if args.candidates_factor is not None:
        over["candidates_factor"] = args.candidates_factor
    return replace(cfg, **over)


def _price_basket(args) -> int:
    cfg = load_config(args.config or "market_2d")
    steps = cfg.get("steps", [cfg.get("N", 10)])
    if args.steps:
        steps = args.steps
    lat = _lattice_config(args, cfg)
    report = ex.run_basket_experiment(
        cfg, lat, steps, args.reps, args.seed, Path(args.config or "market_2d").stem, args.workers
    )
    files = ex.emit_report(report, args.out)
    for rec in ex.summarize(report):
        print(f"N={rec['N']:>3}  grid {rec['grid_price_mean']:.4f} +- {rec['grid_price_std']:.4f}"
              f"  binomial {rec['binomial_price_mean']:.4f}  bound {rec['error_bound_mean']:.4f}")
    print("wrote " + ", ".join(str(f) for f in files))
    return 0


def _gmm_select(args) -> int:
    gmm = ex.load_gmm(args.config or "gmm_d2_c5")
    report = ex.run_gmm_selection(
        gmm, args.budget, args.reps, args.seed,
        args.candidates_factor or 5.0, args.particles, args.workers,
    )
    files = ex.emit_report(report, args.out)
    for rec in ex.summarize(report):
        print(f"{rec['config']} {rec['method']:>4}: W1 {rec['w1_mean']:.4f} +- {rec['w1_std']:.4f}")
    print("wrote " + ", ".join(str(f) for f in files))
    return 0


def _risk_stability(args) -> int:
    cfg = load_config(args.config or "market_2d")
    report = ex.run_risk_stability(
        cfg, args.reps, args.seed, args.particles or 1000, args.budget or 400, args.workers
    )
    files = ex.emit_report(report, args.out)
    for m, rec in ex.stability_summary(report).items():
        print(f"{m:>12}: std(mean) {rec['mean_std']:.5f}  std(semideviation) {rec['semideviation_std']:.5f}")
    print("wrote " + ", ".join(str(f) for f in files))
    return 0


def _kernel_distance(args) -> int:
    q = DiscreteKernel.from_json(_read_json(args.kernel_a))
    qt = DiscreteKernel.from_json(_read_json(args.kernel_b))
    if args.marginal:
        lam = DiscreteMeasure.from_json(_read_json(args.marginal))
    else:
        lam = DiscreteMeasure.uniform(q.sources)
    cost = GroundCost(args.p)
    out = {"itd": itd(lam, q, qt, cost), "sup": sup_distance(q, qt, cost)}
    print(json.dumps(out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="itdlattice", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, reps):
        p.add_argument("--config", help="JSON config path or bundled config name")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--reps", type=int, default=reps)
        p.add_argument("--out", default="results")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--selector", choices=["exact", "lp-round", "greedy"])
        p.add_argument("--budget", type=int)
        p.add_argument("--particles", type=int)
        p.add_argument("--candidates-factor", type=float)

    p = sub.add_parser("price-basket", help="American basket put: grid method vs binomial tree")
    common(p, 5)
    p.add_argument("--steps", type=int, nargs="+", help="numbers of time steps")
    p.set_defaults(func=_price_basket)

    p = sub.add_parser("gmm-select", help="sup vs integrated selection on a Gaussian mixture")
    common(p, 10)
    p.set_defaults(func=_gmm_select)

    p = sub.add_parser("risk-stability", help="Monte Carlo vs grid estimates of mean and semideviation")
    common(p, 50)
    p.set_defaults(func=_risk_stability)

    p = sub.add_parser("kernel-distance", help="integrated and sup distance between two kernel files")
    p.add_argument("kernel_a")
    p.add_argument("kernel_b")
    p.add_argument("--marginal", help="marginal JSON (default: uniform on the sources)")
    p.add_argument("-p", type=float, default=1.0)
    p.set_defaults(func=_kernel_distance)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, TypeError, FileNotFoundError) as e:
        log.error("configuration error: %s", e)
        return EXIT_CONFIG
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as e:
        log.error("solver failure: %s", e)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
