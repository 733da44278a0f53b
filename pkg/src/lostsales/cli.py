"""Command-line entry point: ``lostsales {fit,eval,optimize,suite,table}``.

Run lengths given on the command line count post-warm-up periods.  A
key-value config file (``--config``) supplies defaults for the ``[run]``
section keys below; explicit flags override it::

    [run]
    seed = 20240601
    horizon = 1000000        ; evaluation run length
    opt_horizon = 10000      ; optimisation run length
    warmup = 2000            ; eval/optimize only; suites use 2000 or 10000 by L
    scale = desk
    out = results/grid.csv
    policies = FP3,PIL,BS,CO,CBS
    evaluator = auto
    workers = 1
    pil_tol = 0.001
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import sys
from dataclasses import asdict

from .distributions import DemandMoments, DiscretePMF, fit_two_moment
from .harness import POLICIES, Settings, generate_lookup_table, run_suite
from .policies import (
    BaseStock,
    CappedBaseStock,
    ConstantOrder,
    CostParams,
    FixedP3,
    ProjectedInventoryLevel,
)
from .simulator import SimConfig, default_warmup, simulate

CONFIG_KEYS = {
    "seed": int, "horizon": int, "opt_horizon": int, "warmup": int, "scale": str, "out": str,
    "policies": str, "evaluator": str, "workers": int, "pil_tol": float,
}


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path) as fh:
        parser.read_file(fh)
    if not parser.has_section("run"):
        return {}
    out = {}
    for key, value in parser["run"].items():
        if key not in CONFIG_KEYS:
            raise SystemExit(f"unknown config key {key!r}")
        out[key] = CONFIG_KEYS[key](value)
    return out


def _demand(args):
    if args.demand == "poisson":
        return DiscretePMF.poisson(args.mean)
    if args.demand == "geometric":
        return DiscretePMF.geometric(args.mean)
    hint = None if args.demand == "auto" else args.demand
    return fit_two_moment(DemandMoments(args.mean, args.cv), hint)


def _describe(d) -> dict:
    m, v = d.moments()
    info = {"family": type(d).__name__, "mean": m, "cv": math.sqrt(v) / m}
    if not d.discrete:
        info["packed"] = [float(x) for x in d.packed()]
    else:
        info["support_max"] = len(d.probs) - 1
    return info


def _sim_config(args, conf, d, horizon: int, seed: int):
    warm = args.warmup if args.warmup is not None else conf.get("warmup", default_warmup(args.L))
    return SimConfig(CostParams(args.h, args.p, args.L), warm + horizon, seed, d, warmup=warm)


def parse_policy(text: str):
    """``BS:S``, ``CO:Q``, ``CBS:S:Qmax``, ``FP3:target``, ``PIL:target``."""
    name, *vals = text.split(":")
    nums = [float(v) for v in vals]
    name = name.upper()
    if name == "BS" and len(nums) == 1:
        return BaseStock(*nums)
    if name == "CO" and len(nums) == 1:
        return ConstantOrder(*nums)
    if name == "CBS" and len(nums) == 2:
        return CappedBaseStock(*nums)
    if name == "FP3" and len(nums) == 1:
        return FixedP3(nums[0])
    if name == "PIL" and len(nums) == 1:
        return ProjectedInventoryLevel(nums[0])
    raise argparse.ArgumentTypeError(f"cannot parse policy {text!r}")


def _stats_json(st) -> dict:
    return asdict(st)


def cmd_fit(args, conf) -> int:
    print(json.dumps(_describe(_demand(args)), indent=1))
    return 0


def _with_evaluator(pol, evaluator):
    if isinstance(pol, FixedP3):
        return FixedP3(pol.target, evaluator)
    if isinstance(pol, ProjectedInventoryLevel):
        return ProjectedInventoryLevel(pol.target, evaluator)
    return pol


def cmd_eval(args, conf) -> int:
    d = _demand(args)
    pol = _with_evaluator(args.policy, args.evaluator or conf.get("evaluator", "auto"))
    cfg = _sim_config(args, conf, d, args.horizon or conf.get("horizon", 1_000_000),
                      args.seed if args.seed is not None else conf.get("seed", 1))
    st = simulate(pol, cfg)
    print(json.dumps({"policy": repr(pol), "stats": _stats_json(st)}, indent=1, default=str))
    return 0


def cmd_optimize(args, conf) -> int:
    from .harness import optimise_policy

    d = _demand(args)
    seed = args.seed if args.seed is not None else conf.get("seed", 1)
    opt = _sim_config(args, conf, d, args.opt_horizon or conf.get("opt_horizon", 10_000), seed)
    ev = _sim_config(args, conf, d, args.horizon or conf.get("horizon", 1_000_000), seed + 1)
    settings = Settings(seed=seed, pil_tol=conf.get("pil_tol", 1e-3))
    evaluator = args.evaluator or conf.get("evaluator", "auto")
    if evaluator == "auto":
        evaluator = "exact_discrete" if d.discrete else "backward"
    pol, search, note = optimise_policy(args.policy.upper(), opt, settings, evaluator)
    st = simulate(pol, ev)
    print(json.dumps({"policy": repr(pol), "search_cost": search.avg_cost, "note": note,
                      "stats": _stats_json(st)}, indent=1, default=str))
    return 0


def _settings(args, conf) -> Settings:
    pols = args.policies or conf.get("policies")
    pols = tuple(p.strip().upper() for p in pols.split(",")) if pols else POLICIES
    unknown = set(pols) - set(POLICIES)
    if unknown:
        raise SystemExit(f"unknown policies {sorted(unknown)}")
    return Settings(
        seed=args.seed if args.seed is not None else conf.get("seed", Settings.seed),
        opt_horizon=args.opt_horizon or conf.get("opt_horizon", Settings.opt_horizon),
        eval_horizon=args.horizon or conf.get("horizon", Settings.eval_horizon),
        pil_tol=conf.get("pil_tol", Settings.pil_tol),
        evaluator=args.evaluator or conf.get("evaluator", "auto"),
        policies=pols,
        workers=args.workers or conf.get("workers", 1),
    )


def cmd_suite(args, conf) -> int:
    settings = _settings(args, conf)
    scale = args.scale or conf.get("scale", "desk")
    out = args.out or conf.get("out") or f"results/{args.name}.csv"
    summary = run_suite(args.name, out, settings, scale)
    print(json.dumps(summary))
    return 2 if summary["failed"] else 0


def _floats(text):
    return tuple(float(x) for x in text.split(","))


def cmd_table(args, conf) -> int:
    settings = _settings(args, conf)
    spec = {"cv": _floats(args.cvs), "p": _floats(args.ps),
            "L": tuple(int(x) for x in args.Ls.split(","))}
    out = args.out or conf.get("out") or "results/lookup.csv"
    summary = generate_lookup_table(spec, out, settings)
    print(json.dumps(summary))
    return 2 if summary["failed"] else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lostsales", description=__doc__.split("\n")[0])
    ap.add_argument("--config", help="key-value config file with a [run] section")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def demand_flags(p):
        p.add_argument("--demand", default="auto",
                       choices=["auto", "SE", "ME", "ME1K", "HY", "poisson", "geometric"])
        p.add_argument("--mean", type=float, default=10.0)
        p.add_argument("--cv", type=float, default=1.0)

    def run_flags(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--horizon", type=int, help="evaluation run length")
        p.add_argument("--evaluator", choices=["auto", "backward", "forward", "exact_discrete",
                                               "exact_phase"])

    def cost_flags(p):
        p.add_argument("--p", type=float, default=9.0)
        p.add_argument("--h", type=float, default=1.0)
        p.add_argument("--L", type=int, default=1)
        p.add_argument("--warmup", type=int)

    p = sub.add_parser("fit", help="show the two-moment fit")
    demand_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="simulate one policy")
    demand_flags(p)
    run_flags(p)
    cost_flags(p)
    p.add_argument("--policy", type=parse_policy, required=True,
                   help="BS:S, CO:Q, CBS:S:Qmax, FP3:target or PIL:target")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("optimize", help="optimise one policy, then evaluate it")
    demand_flags(p)
    run_flags(p)
    cost_flags(p)
    p.add_argument("--opt-horizon", type=int)
    p.add_argument("--policy", required=True, choices=[x.lower() for x in POLICIES] + list(POLICIES))
    p.set_defaults(func=cmd_optimize)

    def suite_flags(p):
        run_flags(p)
        p.add_argument("--opt-horizon", type=int)
        p.add_argument("--out")
        p.add_argument("--policies", help="comma-separated subset of " + ",".join(POLICIES))
        p.add_argument("--workers", type=int)

    p = sub.add_parser("suite", help="run an experiment suite")
    p.add_argument("name", choices=["zipkin", "xin", "grid", "sensitivity"])
    p.add_argument("--scale", choices=["desk", "full"])
    suite_flags(p)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("table", help="lookup table of optimal FP3 targets")
    p.add_argument("--cvs", default="0.25,0.5,0.75,1,1.5,2")
    p.add_argument("--ps", default="4,9,19,49,99,199")
    p.add_argument("--Ls", default="1,2,4,8")
    suite_flags(p)
    p.set_defaults(func=cmd_table)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    conf = load_config(args.config)
    return args.func(args, conf)


if __name__ == "__main__":
    sys.exit(main())
