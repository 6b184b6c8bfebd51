"""Command-line entry point: ``nuisreg <command> [options]``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
3 when ``verify`` ran but some criterion failed.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import acceptance as acc
from . import bvm as bv
from . import diagnostics as dg
from . import families as fam
from . import harness as hs
from . import posterior as post
from .errors import (BudgetExceededError, ConfigError, CovarianceNotSPDError, NumericalFailure,
                     NuisregError, QuadratureError, RankError)
from .model import GroupedDataset, SparseVector
from .priors import SpikeSlabSpec

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_FAILED = 0, 1, 2, 3
NUMERIC_ERRORS = (NumericalFailure, QuadratureError, CovarianceNotSPDError, RankError,
                  np.linalg.LinAlgError, FloatingPointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o).__name__)


def _write_json(obj, path):
    text = json.dumps(obj, default=_json_default, indent=1)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _load_config(path, seed=None):
    cfg = hs.ExperimentConfig.load(path)
    if seed is not None:
        cfg.seed = int(seed)
    return cfg


def _load_bundle(path):
    with open(path) as fh:
        d = json.load(fh)
    if d.get("kind") != "nuisreg-dataset":
        # a bare dataset without truth or settings
        return {"data": GroupedDataset.from_dict(d), "theta0": None, "eta0": None, "config": None}
    t = d["theta0"]
    return {"data": GroupedDataset.from_dict(d["data"]),
            "theta0": SparseVector(tuple(t["support"]), np.asarray(t["values"], float), t["p"]),
            "eta0": fam.family_from_dict(d["eta0"]),
            "config": hs.ExperimentConfig.from_dict(d["config"]) if d.get("config") else None}


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    cfg = _load_config(args.config, args.seed)
    points = cfg.grid.points()
    if not 0 <= args.grid_index < len(points):
        raise ConfigError(f"grid index must lie in [0, {len(points)})")
    pt = points[args.grid_index]
    eta0, theta0 = cfg.eta0(pt["J"]), cfg.theta0(pt["p"])
    data = fam.simulate(eta0, theta0, pt["n"], pt["p"],
                        seed=fam.make_rng(cfg.seed, args.grid_index, args.replicate, 0), **cfg.simulate)
    bundle = {"kind": "nuisreg-dataset", "data": data.to_dict(),
              "theta0": {"support": list(theta0.support), "values": theta0.values.tolist(), "p": theta0.p},
              "eta0": eta0.to_dict(), "config": cfg.to_dict(),
              "grid_index": args.grid_index, "replicate": args.replicate}
    _write_json(bundle, args.out)
    print(f"wrote dataset n={data.n} p={data.p} n_*={data.n_star} to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_fit(args):
    b = _load_bundle(args.data)
    cfg = _load_config(args.config, args.seed) if args.config else b["config"]
    if cfg is None:
        raise ConfigError("a bare dataset needs --config for the family and prior settings")
    eta0 = b["eta0"] if b["eta0"] is not None else cfg.eta0(cfg.grid.J[0] if cfg.grid.J else None)
    if args.engine:
        cfg.engine.kind = args.engine
    if args.n_iter:
        cfg.engine.n_iter = args.n_iter
    seed = cfg.seed if args.seed is None else args.seed
    spec, sp, theta_hat, eta_hat = hs.fit_replicate(cfg, b["data"], None, eta0, seed)
    out = {"engine": cfg.engine.kind, "lam": spec.lam, "posterior": sp.to_dict(),
           "theta_hat": theta_hat, "eta_hat": eta_hat.to_dict(), "modal": list(sp.modal())}
    _write_json(out, args.out)
    order = np.argsort(-sp.log_weights)[:5]
    for i in order:
        print(f"  P(S = {sp.supports[i]}) = {np.exp(sp.log_weights[i]):.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_bvm(args):
    b = _load_bundle(args.data)
    cfg = b["config"]
    fit = None
    if args.fit:
        with open(args.fit) as fh:
            fit = json.load(fh)
    if args.mode == "oracle":
        if b["theta0"] is None:
            raise ConfigError("oracle mode needs a dataset bundle carrying the truth")
        theta0, eta0 = b["theta0"], b["eta0"]
    else:
        if fit is None:
            raise ConfigError("plug-in mode needs --fit with estimates")
        theta0 = SparseVector.from_dense(np.asarray(fit["theta_hat"], dtype=float))
        eta0 = fam.family_from_dict(fit["eta_hat"])
    data = b["data"]
    prior = cfg.prior if cfg else hs.PriorSettings()
    spec = SpikeSlabSpec.from_design(data.x, data.n, prior.a, prior.L, prior.lambda_policy, prior.check_range)
    s_max = args.s_max if args.s_max is not None else (cfg.engine.s_max if cfg else 3)
    mix = bv.build_bvm(data, theta0, eta0, spec, args.h_choice, s_max=s_max, mode=args.mode)
    out = mix.to_dict()
    if fit is not None:
        sp = post.SupportPosterior.from_dict(fit["posterior"])
        out["tv_surrogate"] = bv.tv_support_mixture(sp, mix)
        print(f"TV surrogate to the fitted posterior: {out['tv_surrogate']:.4f}", file=sys.stderr)
    _write_json(out, args.out)
    top = np.argsort(-mix.log_weights)[:5]
    for i in top:
        print(f"  weight {mix.supports[i]} = {np.exp(mix.log_weights[i]):.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_diagnose(args):
    if args.data:
        b = _load_bundle(args.data)
        x = b["data"].x
    elif args.config:
        cfg = _load_config(args.config, args.seed)
        pt = cfg.grid.points()[0]
        x = fam.simulate(cfg.eta0(pt["J"]), cfg.theta0(pt["p"]), pt["n"], pt["p"],
                         seed=fam.make_rng(cfg.seed, 0, 0, 0), **cfg.simulate).x
    else:
        raise ConfigError("diagnose needs --data or --config")
    rep = dg.diagnose(x, args.s, s0=args.s0, budget=args.budget, phi1_max=args.phi1_max,
                      seed=args.seed or 0)
    _write_json(rep.to_dict(), args.out)
    return EXIT_OK


def cmd_verify(args):
    results = acc.run_suite(args.suite, seed=args.seed or 0)
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed")
    return EXIT_OK if n_pass == len(results) else EXIT_FAILED


def _print_slopes(table, column):
    pts = table.grid_points()
    for p in sorted({v["p"] for v in pts.values()}):
        if len({v["n"] for v in pts.values() if v["p"] == p}) < 2:
            continue
        try:
            slope = hs.contraction_slope(table, column, p=p)
        except ValueError as exc:
            print(f"contraction slope ({column}, p={p}): unavailable ({exc})")
            continue
        print(f"contraction slope ({column}, p={p}): {slope:.6f}")


def cmd_run(args):
    cfg = _load_config(args.config, args.seed)
    out = args.out or cfg.out
    if out is None:
        raise ConfigError("run needs --out or an 'out' key in the config")
    table = hs.run_experiment(cfg, out, workers=args.workers, resume=not args.fresh)
    print(hs.write_summary(table), end="")
    _print_slopes(table, args.error_column)
    print(f"{len(table)} records ({len(table) - len(table.ok())} failed) in {out}")
    return EXIT_OK


def cmd_report(args):
    table = hs.ResultsTable.load(args.out)
    if not len(table):
        raise ConfigError(f"no results found in {args.out}")
    print(hs.write_summary(table), end="")
    _print_slopes(table, args.error_column)
    print(f"note: {hs.AGGREGATION_NOTE}")
    return EXIT_OK


def build_parser():
    ap = _Parser(prog="nuisreg", description="Sparse regression with nuisance parameters.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="draw one dataset from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--grid-index", type=int, default=0)
    s.add_argument("--replicate", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="posterior for one dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", default="-")
    s.add_argument("--seed", type=int)
    s.add_argument("--engine", choices=["enumeration", "rjmcmc"])
    s.add_argument("--n-iter", type=int)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("bvm", help="build the support-mixture approximation")
    s.add_argument("--data", required=True)
    s.add_argument("--fit", help="fit output to compare against (and plug-in estimates)")
    s.add_argument("--mode", choices=["oracle", "plug-in"], default="oracle")
    s.add_argument("--h-choice", default="auto", choices=["auto", "zero", "spline", "design"])
    s.add_argument("--s-max", type=int)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_bvm)

    s = sub.add_parser("diagnose", help="design diagnostics")
    s.add_argument("--data")
    s.add_argument("--config")
    s.add_argument("--s", type=int, nargs="+", default=[1, 2, 3])
    s.add_argument("--s0", type=int)
    s.add_argument("--budget", type=int, default=dg.DEFAULT_BUDGET)
    s.add_argument("--phi1-max", type=int, default=3)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("verify", help="run acceptance criteria")
    s.add_argument("--suite", default="all", choices=sorted(acc.SUITES))
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("run", help="run a simulation experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--fresh", action="store_true", help="ignore existing results instead of resuming")
    s.add_argument("--error-column", default="err_l2")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="aggregate a finished results directory")
    s.add_argument("--out", required=True, help="results directory")
    s.add_argument("--error-column", default="err_l2")
    s.set_defaults(func=cmd_report)
    return ap


def cli_main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        if not getattr(args, "command", None):
            ap.print_help(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"nuisreg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"nuisreg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BudgetExceededError as exc:
        print(f"nuisreg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NuisregError, OSError, ValueError, KeyError) as exc:
        print(f"nuisreg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
