"""Executable invariant suites: each check returns a named pass/fail with its worst residual."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dispatch import BindingSetChanged, InfeasibleError, binding_signature, solve_recourse, solve_slp
from .equilibrium import candidate_from_dispatch, verify_equilibrium
from .model import MarketInstance, Scenario
from .risk import PolyhedralRiskSet, RiskSpec, rho_disutility, risk_from_dict, worst_case_measure
from .riskmarket import EmptyIntersection, extract_risk_adjusted_measure, solve_raslp

MONOTONE_TOL = 1e-8


@dataclass
class PropertyResult:
    name: str
    passed: bool
    residual: float
    checked: int = 0
    skipped: int = 0
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "residual": self.residual, "checked": self.checked,
                "skipped": self.skipped, "detail": self.detail}


def _random_x(inst: MarketInstance, rng: np.random.Generator) -> dict:
    return {g.id: float(rng.uniform(0.0, inst.max_capacity(g))) if rng.random() < 0.8 else 0.0
            for g in inst.generators}


def precommit_monotonicity(inst: MarketInstance, x: dict, x_hat: dict, preference="min") -> float:
    """Smallest <x - x_hat, rho - rho_hat> over scenarios (nonnegative when monotone)."""
    worst = np.inf
    for sc in inst.scenarios:
        a = solve_recourse(inst, x, sc, preference)
        b = solve_recourse(inst, x_hat, sc, preference)
        worst = min(worst, sum((x[g.id] - x_hat[g.id]) * (a.rho[g.id] - b.rho[g.id]) for g in inst.generators))
    return float(worst)


def _with_demand(sc: Scenario, demand: dict) -> Scenario:
    return Scenario(sc.id, sc.prob, dict(demand), sc.capacity_overrides)


def demand_monotonicity(inst: MarketInstance, x: dict, scen: Scenario, d_hi: dict, d_lo: dict) -> float:
    """<D - D_hat, lambda - lambda_hat> for one scenario's demand pair."""
    a = solve_recourse(inst, x, _with_demand(scen, d_hi))
    b = solve_recourse(inst, x, _with_demand(scen, d_lo))
    return float(sum((d_hi[n] - d_lo[n]) * (a.lam[n] - b.lam[n]) for n in inst.network.nodes))


@dataclass
class Cor2Probe:
    omega: str
    gen_id: str
    delta: float
    dlam: float
    magnitude: float
    magnitude_residual: float
    sign_ok: bool


def price_jump_probe(inst: MarketInstance, x: dict, gen_id, delta: float, scen: Scenario):
    """Price change at the unit's node when its pre-commitment moves by delta.

    Returns None (probe skipped) unless the unit is dispatched strictly inside
    its range and strictly ramping (up or down) in both solves, and no other
    binding constraint changes. At X = x the price is set-valued, so a jump
    measured from there would depend on the dual selection.
    """
    g = inst.generator(gen_id)
    x2 = dict(x)
    x2[gen_id] = x[gen_id] + delta
    if x2[gen_id] < 0:
        return None
    a = solve_recourse(inst, x, scen)
    b = solve_recourse(inst, x2, scen)
    cap = inst.capacity(g, scen)
    for r, xr in ((a, x[gen_id]), (b, x2[gen_id])):
        if not (1e-7 < r.X[gen_id] < cap - 1e-7) or abs(r.X[gen_id] - xr) <= 1e-7:
            return None
    if binding_signature(inst, a, (gen_id,)) != binding_signature(inst, b, (gen_id,)):
        return None
    dlam = b.lam[g.node] - a.lam[g.node]
    mag = g.r_u + g.r_v
    res = min(abs(dlam), abs(abs(dlam) - mag))
    # a higher pre-commitment can only lower (never raise) the local price
    sign_ok = dlam * np.sign(delta) <= MONOTONE_TOL
    return Cor2Probe(str(scen.id), gen_id, delta, float(dlam), mag, float(res), bool(sign_ok))


def suite_monotonicity(inst: MarketInstance, rng, n=20, tol=MONOTONE_TOL):
    worst, checked = np.inf, 0
    for _ in range(n):
        x, xh = _random_x(inst, rng), _random_x(inst, rng)
        try:
            worst = min(worst, precommit_monotonicity(inst, x, xh))
        except InfeasibleError:
            continue
        checked += 1
    p1 = PropertyResult("precommit-monotonicity", bool(worst >= -tol), float(min(worst, 0.0)) if checked else 0.0,
                        checked, n - checked, "<x - x_hat, rho - rho_hat> >= -tol per scenario")
    worst, checked, skipped = np.inf, 0, 0
    slp = solve_slp(inst)
    for _ in range(n):
        sc = list(inst.scenarios)[int(rng.integers(len(inst.scenarios)))]
        lo = {k: inst.demand(sc, k) for k in inst.network.nodes}
        hi = {k: v + float(rng.uniform(0.0, 20.0)) * (rng.random() < 0.7) for k, v in lo.items()}
        try:
            worst = min(worst, demand_monotonicity(inst, slp.x, sc, hi, lo))
        except InfeasibleError:
            skipped += 1
            continue
        checked += 1
    r3 = PropertyResult("demand-monotonicity", bool(worst >= -tol), float(min(worst, 0.0)) if checked else 0.0,
                        checked, skipped, "<D - D_hat, lambda - lambda_hat> >= -tol for D >= D_hat")
    return [p1, r3]


def straddle_probe(inst, base: dict, g, sc, rng):
    """Pre-commitment just off the unit's own dispatch and a step that may cross it.

    Crossing the dispatch level is where the price jumps; half the steps cross.
    """
    x = dict(base)
    own = solve_recourse(inst, x, sc).X[g.id]
    side = float(rng.choice([-1.0, 1.0]))
    offset = float(rng.uniform(1e-2, 1.0))
    x[g.id] = max(own + side * offset, 0.0)
    step = float(rng.uniform(1e-2, 1.0))
    delta = -side * (offset + step) if rng.random() < 0.5 else side * step
    return x, delta


def suite_price_jumps(inst: MarketInstance, rng, n=20, tol=MONOTONE_TOL):
    flex = [g for g in inst.generators if not g.inflexible and g.r_u + g.r_v > 0]
    worst_mag, worst_sign, checked, skipped = 0.0, True, 0, 0
    base = solve_slp(inst).x
    for _ in range(n):
        if not flex:
            break
        g = flex[int(rng.integers(len(flex)))]
        sc = list(inst.scenarios)[int(rng.integers(len(inst.scenarios)))]
        x, delta = straddle_probe(inst, base, g, sc, rng)
        try:
            pr = price_jump_probe(inst, x, g.id, delta, sc)
        except (InfeasibleError, BindingSetChanged):
            pr = None
        if pr is None:
            skipped += 1
            continue
        checked += 1
        worst_mag = max(worst_mag, pr.magnitude_residual)
        worst_sign = worst_sign and pr.sign_ok
    mag = PropertyResult("price-jump-magnitude", bool(worst_mag <= tol), worst_mag, checked, skipped,
                         "|dlambda| in {0, r_u + r_v}")
    sign = PropertyResult("price-jump-direction", worst_sign, 0.0 if worst_sign else 1.0, checked, skipped,
                          "x up => lambda down")
    return [mag, sign]


def suite_coherence(inst: MarketInstance, rng, n=50, tol=1e-9):
    probs = inst.scenarios.probs
    parsed = [r if isinstance(r, (RiskSpec, PolyhedralRiskSet)) else risk_from_dict(r) for r in inst.risk.values()]
    specs = [r for r in parsed if isinstance(r, RiskSpec)] or [RiskSpec.cvar(1.0, 0.5)]
    worst = {"homogeneity": 0.0, "translation": 0.0, "monotonicity": 0.0, "subadditivity": 0.0, "dual": 0.0}
    for _ in range(n):
        spec = specs[int(rng.integers(len(specs)))]
        z1, z2 = rng.normal(0, 10, len(probs)), rng.normal(0, 10, len(probs))
        t, a = float(rng.uniform(0, 5)), float(rng.normal(0, 5))
        r1, r2 = rho_disutility(z1, probs, spec), rho_disutility(z2, probs, spec)
        worst["homogeneity"] = max(worst["homogeneity"], abs(rho_disutility(t * z1, probs, spec) - t * r1))
        worst["translation"] = max(worst["translation"], abs(rho_disutility(z1 + a, probs, spec) - (r1 - a)))
        up = z1 + np.abs(z2)
        worst["monotonicity"] = max(worst["monotonicity"], rho_disutility(up, probs, spec) - r1)
        worst["subadditivity"] = max(worst["subadditivity"], rho_disutility(z1 + z2, probs, spec) - r1 - r2)
        mu = worst_case_measure(z1, probs, spec)
        worst["dual"] = max(worst["dual"], abs(float(-(mu @ z1)) - r1))
    return [PropertyResult(f"risk-{k}", bool(v <= tol), float(v), n) for k, v in worst.items()]


def suite_neutral_equivalence(inst: MarketInstance, rng=None, tol=1e-6):
    slp = solve_slp(inst)
    neutral = {g.id: RiskSpec.neutral() for g in inst.generators}
    neutral["iso"] = RiskSpec.neutral()
    ras = solve_raslp(inst, neutral)
    diff = abs(ras.objective - slp.objective)
    out = [PropertyResult("neutral-clearing-matches-dispatch", bool(diff <= tol * (1 + abs(slp.objective))), diff, 1)]
    rep = verify_equilibrium(inst, candidate_from_dispatch(inst, slp), neutral, tol)
    out.append(PropertyResult("neutral-equilibrium-gaps", rep.ok, rep.max_gap, len(rep.gaps)))
    return out


def suite_risk_measure(inst: MarketInstance, rng=None, tol=1e-7):
    try:
        sol = solve_raslp(inst)
    except EmptyIntersection as e:
        return [PropertyResult("risk-adjusted-measure", False, np.inf, 0, 0, str(e))]
    pi = sol.pi
    res = [PropertyResult("pi-nonnegative", bool(np.all(pi >= -1e-12)), float(max(-pi.min(), 0.0)), 1),
           PropertyResult("pi-sums-to-one", bool(abs(pi.sum() - 1) <= 1e-8), float(abs(pi.sum() - 1)), 1)]
    try:
        _, certs = extract_risk_adjusted_measure(sol, tol=tol)
        worst = max(certs.values(), default=0.0)
        res.append(PropertyResult("pi-membership", True, float(worst), len(certs)))
    except AssertionError as e:
        res.append(PropertyResult("pi-membership", False, float(max(sol.membership.values())), 0, 0, str(e)))
    clear = np.abs(sum(sol.W.values())).max() if sol.W else 0.0
    res.append(PropertyResult("securities-clear", bool(clear <= 1e-7), float(clear), len(pi)))
    return res


SUITES = {
    "monotonicity": suite_monotonicity,
    "corollary2": suite_price_jumps,
    "coherence": suite_coherence,
    "neutral": suite_neutral_equivalence,
    "pi": suite_risk_measure,
}


def run_suite(name: str, inst: MarketInstance, seed=0):
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name](inst, np.random.default_rng(seed))
