"""Command-line entry points writing deterministic JSON reports.

Exit codes: 0 success, 1 usage or parse error, 2 infeasible model or empty
risk-set intersection.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import __version__
from .dispatch import InfeasibleError, generator_profit, settle, solve_recourse, solve_slp
from .equilibrium import (FIXED_DISPATCH, GAP_TOL, PRICE_TAKING, RULES, candidate_from_dispatch, iterate_fixed_point,
                          verify_equilibrium)
from .model import EmpiricalDistribution, instance_from_dict, instance_hash, validate_instance
from .newsvendor import MODES, RiskCoefficients, brute_force_argmin, closed_form_precommit, precommit_quantile
from .newsvendor import profit_lower_bound
from .properties import SUITES, run_suite
from .risk import RiskSpec
from .riskmarket import CUT_TOL, MEMBERSHIP_TOL, EmptyIntersection, solve_raslp

EXIT_OK, EXIT_USAGE, EXIT_MODEL = 0, 1, 2
SIG_DIGITS = 12
SHORTFALL = "demand exceeds total capacity"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _clean(v):
    """Round floats to 12 significant digits and make the tree JSON-safe."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        r = float(f"{f:.{SIG_DIGITS}g}")
        return 0.0 if r == 0 else r
    return v


def render(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def _tolerances(**extra):
    tol = {"membership": MEMBERSHIP_TOL, "cut": CUT_TOL, "equilibrium_gap": GAP_TOL, "significant_digits": SIG_DIGITS}
    tol.update(extra)
    return tol


def _load(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e}")
    except json.JSONDecodeError as e:
        raise UsageError(f"parse error in {path}: line {e.lineno} column {e.colno}: {e.msg}")
    try:
        inst = instance_from_dict(doc)
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"invalid instance {path}: {e!r}")
    problems = validate_instance(inst)
    # unservable demand is a property of the model, not of the input format
    shortfall = [p for p in problems if p.endswith(SHORTFALL)]
    if problems and len(shortfall) == len(problems):
        raise InfeasibleError("; ".join(shortfall), shortfall[0].split()[1])
    if problems:
        raise UsageError("invalid instance: " + "; ".join(problems))
    return inst, doc


def _parse_x(text, inst):
    try:
        if text.lstrip().startswith("{"):
            x = json.loads(text)
        else:
            with open(text) as fh:
                x = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read pre-commitment {text!r}: {e}")
    if "x" in x and isinstance(x["x"], dict):
        x = x["x"]
    ids = {g.id for g in inst.generators}
    unknown = set(x) - ids
    if unknown:
        raise UsageError(f"unknown generators in x: {sorted(unknown)}")
    out = {g: float(x.get(g, 0.0)) for g in sorted(ids)}
    if any(v < 0 for v in out.values()):
        raise UsageError("pre-commitment must be nonnegative")
    return out


def _header(command, inst=None, doc=None, **tol):
    h = {"command": command, "version": __version__, "tolerances": _tolerances(**tol)}
    if doc is not None:
        h["instance_hash"] = instance_hash(doc)
        h["instance"] = inst.name
    return h


def cmd_solve_sdm(args):
    inst, doc = _load(args.instance)
    sol = solve_slp(inst)
    props = []
    for s in sol.scenarios:
        rep = settle(inst, s, check=False)
        props.append({"name": f"operator-surplus[{s.omega}]", "passed": rep.iso_net >= -1e-6, "residual": rep.iso_net})
    rep = _header("solve-sdm", inst, doc)
    rep.update(sol.to_dict())
    rep["cumulative_x"] = sum(sol.x.values())
    rep["properties"] = props
    return rep


def cmd_recourse(args):
    inst, doc = _load(args.instance)
    if args.x is None or args.scenario is None:
        raise UsageError("recourse needs --x and --scenario")
    x = _parse_x(args.x, inst)
    try:
        scen = inst.scenarios.by_id(args.scenario)
    except KeyError:
        raise UsageError(f"unknown scenario {args.scenario!r}; known: {[s.id for s in inst.scenarios]}")
    res = solve_recourse(inst, x, scen)
    st = settle(inst, res, check=False)
    rep = _header("recourse", inst, doc)
    rep.update(res.to_dict())
    rep["x"] = x
    rep["cost"] = res.cost
    rep["settlement"] = st.to_dict()
    rep["profit"] = {g.id: generator_profit(inst, res, g.id) for g in inst.generators}
    bound = {g.id: [-g.r_u, g.r_v] for g in inst.generators}
    rep["properties"] = [
        {"name": "operator-surplus", "passed": st.iso_net >= -1e-6, "residual": st.iso_net},
        {"name": "deviation-dual-range", "passed": all(bound[g][0] - 1e-8 <= r <= bound[g][1] + 1e-8
                                                       for g, r in res.rho.items() if not inst.generator(g).inflexible),
         "residual": 0.0},
    ]
    return rep


def cmd_solve_raslp(args):
    inst, doc = _load(args.instance)
    if not doc.get("risk"):
        raise UsageError("instance has no risk block")
    sol = solve_raslp(inst, method=args.method)
    rep = _header("solve-raslp", inst, doc)
    rep.update(sol.to_dict())
    rep["cumulative_x"] = sum(sol.x.values())
    clear = float(np.abs(sum(sol.W.values())).max()) if sol.W else 0.0
    rep["properties"] = [
        {"name": "pi-nonnegative", "passed": bool(np.all(sol.pi >= -1e-12)), "residual": float(max(-sol.pi.min(), 0))},
        {"name": "pi-sums-to-one", "passed": abs(sol.pi.sum() - 1) <= 1e-8, "residual": float(abs(sol.pi.sum() - 1))},
        {"name": "securities-clear", "passed": clear <= 1e-7, "residual": clear},
    ] + [{"name": f"pi-membership[{a}]", "passed": v <= MEMBERSHIP_TOL, "residual": v}
         for a, v in sorted(sol.membership.items())]
    return rep


def _floats(text, what):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse {what} {text!r}")


def cmd_newsvendor(args):
    if args.support is None:
        raise UsageError("newsvendor needs --support")
    support = _floats(args.support, "support")
    probs = _floats(args.probs, "probs") if args.probs else [1.0 / len(support)] * len(support)
    if len(probs) != len(support) or not support:
        raise UsageError("support and probs must have the same nonzero length")
    try:
        dist = EmpiricalDistribution.from_samples(support, probs)
        coeffs = RiskCoefficients(args.kappa, args.beta_bar)
        spec = RiskSpec.cvar(args.kappa, args.beta_bar)
        q = precommit_quantile(args.r_u, args.r_v, args.kappa, args.beta_bar, args.mode)
    except ValueError as e:
        raise UsageError(f"domain error: {e}")
    x_cf = closed_form_precommit(dist, args.r_u, args.r_v, spec, args.mode)
    arg = brute_force_argmin(dist, args.r_u, args.r_v, spec, args.mode)
    agree = bool(np.any(np.abs(arg - x_cf) <= 1e-9 * (1 + abs(x_cf))))
    rep = _header("newsvendor")
    rep.update({"mode": args.mode, "quantile": q, "x_star": x_cf, "oracle_argmin": list(arg),
                "oracle_x_star": float(arg[0]), "agree": agree, "alpha": coeffs.alpha,
                "profit_lower_bound": profit_lower_bound(args.r_u, args.r_v, x_cf, coeffs, args.mode),
                "inputs": {"support": list(dist.support), "probs": list(dist.probs), "r_u": args.r_u,
                           "r_v": args.r_v, "kappa": args.kappa, "beta_bar": args.beta_bar}})
    rep["properties"] = [{"name": "closed-form-in-oracle-argmin", "passed": agree, "residual":
                          float(np.min(np.abs(arg - x_cf)))}]
    return rep


def _candidate_from_report(inst, path):
    from .dispatch import DispatchSolution, ScenarioResult
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read candidate {path}: {e}")
    try:
        scen = [ScenarioResult(s["omega"], float(inst.scenarios.by_id(s["omega"]).prob), s["X"], s["U"], s["V"],
                               s.get("flows", {}), s.get("angles", {}), s["lambda"], s.get("rho", {}))
                for s in doc["scenarios"]]
        return candidate_from_dispatch(inst, DispatchSolution(doc["x"], scen, doc.get("objective", 0.0)))
    except (KeyError, TypeError) as e:
        raise UsageError(f"malformed candidate {path}: {e!r}")


def cmd_equilibrium(args):
    inst, doc = _load(args.instance)
    if not doc.get("risk"):
        raise UsageError("instance has no risk block")
    if args.iterate == (args.verify is not None):
        raise UsageError("equilibrium needs exactly one of --iterate or --verify CANDIDATE")
    tol = args.tol if args.tol is not None else GAP_TOL
    rule = args.rule or (FIXED_DISPATCH if args.iterate else PRICE_TAKING)
    rep = _header("equilibrium", inst, doc, equilibrium_gap=tol)
    if args.iterate:
        cand = iterate_fixed_point(inst, None, damping=args.damping, max_iters=args.max_iters, tol=tol,
                                   rule=rule)
        if args.trace:
            with open(args.trace, "w") as fh:
                fh.write(render({"trace": cand.trace}))
        report = verify_equilibrium(inst, cand, None, tol, rule)
    else:
        cand = (candidate_from_dispatch(inst, solve_slp(inst)) if args.verify == "slp"
                else _candidate_from_report(inst, args.verify))
        report = verify_equilibrium(inst, cand, None, tol, rule)
    rep["candidate"] = cand.to_dict()
    rep["cumulative_x"] = sum(cand.x.values())
    rep["gaps"] = report.to_dict()
    rep["properties"] = [{"name": f"gap[{a}]", "passed": g <= tol, "residual": g} for a, g in sorted(report.gaps.items())]
    return rep


def cmd_check_properties(args):
    if args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; available: {', '.join(sorted(SUITES))}")
    inst, doc = _load(args.instance)
    results = run_suite(args.suite, inst, args.seed)
    rep = _header("check-properties", inst, doc, seed=args.seed)
    rep["suite"] = args.suite
    rep["properties"] = [r.to_dict() for r in results]
    rep["all_passed"] = all(r.passed for r in results)
    return rep


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stochmarket", description="Stochastic and risk-averse electricity market clearing.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, instance=True):
        if instance:
            sp.add_argument("-i", "--instance", required=True, help="instance JSON file")
        sp.add_argument("-o", "--output", help="report path (default: stdout)")

    sp = sub.add_parser("solve-sdm", help="risk-neutral stochastic dispatch")
    common(sp)
    sp.set_defaults(func=cmd_solve_sdm)

    sp = sub.add_parser("recourse", help="real-time dispatch for one scenario")
    common(sp)
    sp.add_argument("--x", help="pre-commitment as a JSON object or file")
    sp.add_argument("--scenario", help="scenario id")
    sp.set_defaults(func=cmd_recourse)

    sp = sub.add_parser("solve-raslp", help="risk-averse clearing with scenario securities")
    common(sp)
    sp.add_argument("--method", choices=("auto", "extreme", "epigraph", "cuts"), default="auto")
    sp.set_defaults(func=cmd_solve_raslp)

    sp = sub.add_parser("newsvendor", help="closed-form pre-commitment versus brute force")
    common(sp, instance=False)
    sp.add_argument("--support", help="comma-separated dispatch values")
    sp.add_argument("--probs", help="comma-separated probabilities (default uniform)")
    sp.add_argument("--r-u", type=float, required=True)
    sp.add_argument("--r-v", type=float, required=True)
    sp.add_argument("--kappa", type=float, default=0.0)
    sp.add_argument("--beta-bar", type=float, default=1.0)
    sp.add_argument("--mode", choices=MODES, default=MODES[0])
    sp.set_defaults(func=cmd_newsvendor)

    sp = sub.add_parser("equilibrium", help="search for or verify a no-trading equilibrium")
    common(sp)
    sp.add_argument("--iterate", action="store_true")
    sp.add_argument("--verify", metavar="CANDIDATE", help='"slp" or a solve-sdm report file')
    sp.add_argument("--rule", choices=RULES, help="gap rule (default: fixed-dispatch when iterating, "
                    "price-taking when verifying)")
    sp.add_argument("--tol", type=float)
    sp.add_argument("--max-iters", type=int, default=100)
    sp.add_argument("--damping", type=float, default=1.0)
    sp.add_argument("--trace", help="write the iteration trace JSON here")
    sp.set_defaults(func=cmd_equilibrium)

    sp = sub.add_parser("check-properties", help="run an invariant suite against an instance")
    common(sp)
    sp.add_argument("--suite", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float)
    sp.set_defaults(func=cmd_check_properties)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("missing command; see --help")
        report = args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_MODEL
    except EmptyIntersection as e:
        print(f"intersection empty: {e}", file=sys.stderr)
        return EXIT_MODEL
    text = render(report)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.command == "check-properties" and not report["all_passed"]:
        return EXIT_USAGE
    return EXIT_OK
