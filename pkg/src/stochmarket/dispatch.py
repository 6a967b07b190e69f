"""Two-stage stochastic dispatch: pre-commitment LP, real-time recourse, settlement."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lp
from .model import MarketInstance, Scenario

BIND_TOL = 1e-7


class InfeasibleError(RuntimeError):
    def __init__(self, msg, scenario=None):
        super().__init__(msg)
        self.scenario = scenario


def line_key(k, line):
    return f"{line.from_node}-{line.to_node}" if k is None else f"{k}:{line.from_node}-{line.to_node}"


def _line_keys(net):
    plain = [line_key(None, l) for l in net.lines]
    if len(set(plain)) == len(plain):
        return plain
    return [line_key(k, l) for k, l in enumerate(net.lines)]


@dataclass
class ScenarioResult:
    omega: str
    prob: float
    X: dict
    U: dict
    V: dict
    flows: dict
    angles: dict
    lam: dict
    rho: dict
    cost: float = 0.0

    def to_dict(self):
        return {"omega": self.omega, "X": self.X, "U": self.U, "V": self.V, "flows": self.flows,
                "lambda": self.lam, "rho": self.rho}


@dataclass
class DispatchSolution:
    x: dict
    scenarios: list
    objective: float
    status: str = lp.OPTIMAL

    def scenario(self, omega) -> ScenarioResult:
        for s in self.scenarios:
            if s.omega == str(omega):
                return s
        raise KeyError(f"unknown scenario {omega!r}")

    def to_dict(self):
        return {"x": dict(sorted(self.x.items())),
                "scenarios": [s.to_dict() for s in sorted(self.scenarios, key=lambda s: s.omega)],
                "objective": self.objective}


@dataclass
class ScenarioBlock:
    """Column and row indices of one scenario's second stage inside an LpBuilder."""

    scen: Scenario
    X: dict = field(default_factory=dict)
    U: dict = field(default_factory=dict)
    V: dict = field(default_factory=dict)
    theta: dict = field(default_factory=dict)
    flow: list = field(default_factory=list)
    balance: dict = field(default_factory=dict)
    nonant: dict = field(default_factory=dict)

    def cost_terms(self, inst: MarketInstance, scale=1.0):
        out = []
        for g in inst.generators:
            out.append((self.X[g.id], scale * g.c))
            if not g.inflexible:
                out.append((self.U[g.id], scale * g.r_u))
                out.append((self.V[g.id], scale * g.r_v))
        return out


def slack_nodes(inst: MarketInstance):
    return {comp[0] for comp in inst.network.components()}


def add_scenario_block(bld: lp.LpBuilder, inst: MarketInstance, scen: Scenario, x, cost_weight=None,
                       fixed_dispatch=None) -> ScenarioBlock:
    """Second stage of one scenario.

    ``x`` maps generator id to either ("col", j) for a first-stage column or a
    number for a fixed pre-commitment. Costs enter the objective scaled by
    ``cost_weight`` when it is not None.
    """
    net = inst.network
    blk = ScenarioBlock(scen)
    sid = scen.id
    w = cost_weight
    for g in inst.generators:
        cap = inst.capacity(g, scen)
        lo_x, hi_x = 0.0, cap
        if fixed_dispatch is not None and g.id in fixed_dispatch:
            lo_x = hi_x = float(fixed_dispatch[g.id])
        blk.X[g.id] = bld.add_var(f"X[{g.id},{sid}]", (w * g.c) if w is not None else 0.0, lo_x, hi_x)
        dev_ub = 0.0 if g.inflexible else lp.INF
        blk.U[g.id] = bld.add_var(f"U[{g.id},{sid}]", (w * g.r_u) if w is not None else 0.0, 0.0, dev_ub)
        blk.V[g.id] = bld.add_var(f"V[{g.id},{sid}]", (w * g.r_v) if w is not None else 0.0, 0.0, dev_ub)
    slack = slack_nodes(inst)
    for n in net.nodes:
        if n in slack:
            blk.theta[n] = bld.add_var(f"theta[{n},{sid}]", 0.0, 0.0, 0.0)
        else:
            blk.theta[n] = bld.add_var(f"theta[{n},{sid}]", 0.0, None, None)
    for k, ln in enumerate(net.lines):
        cap = ln.capacity
        f = bld.add_var(f"F[{k},{sid}]", 0.0, -cap, cap)
        blk.flow.append(f)
        bld.add_row([(f, 1.0), (blk.theta[ln.from_node], -ln.susceptance), (blk.theta[ln.to_node], ln.susceptance)],
                    lp.EQ, 0.0, f"flowdef[{k},{sid}]")
    for g in inst.generators:
        coeffs = [(blk.X[g.id], 1.0), (blk.U[g.id], -1.0), (blk.V[g.id], 1.0)]
        xv = x[g.id]
        if isinstance(xv, tuple):
            coeffs.append((xv[1], -1.0))
            rhs = 0.0
        else:
            rhs = float(xv)
        blk.nonant[g.id] = bld.add_row(coeffs, lp.EQ, rhs, f"nonant[{g.id},{sid}]")
    for n in net.nodes:
        coeffs = [(blk.X[g.id], 1.0) for g in inst.generators if g.node == n]
        for k, ln in enumerate(net.lines):
            if ln.from_node == n:
                coeffs.append((blk.flow[k], -1.0))
            if ln.to_node == n:
                coeffs.append((blk.flow[k], 1.0))
        blk.balance[n] = bld.add_row(coeffs, lp.GE, inst.demand(scen, n), f"balance[{n},{sid}]")
    return blk


def _read_block(inst, blk: ScenarioBlock, sol: lp.LpSolution, price_scale: float) -> ScenarioResult:
    keys = _line_keys(inst.network)
    X, U, V, lam, rho = {}, {}, {}, {}, {}
    cost = 0.0
    for g in inst.generators:
        X[g.id] = float(sol.x[blk.X[g.id]])
        net_dev = float(sol.x[blk.U[g.id]] - sol.x[blk.V[g.id]])
        U[g.id] = max(net_dev, 0.0) + 0.0
        V[g.id] = max(-net_dev, 0.0) + 0.0
        rho[g.id] = float(sol.duals[blk.nonant[g.id]]) / price_scale
        cost += g.c * X[g.id] + (0.0 if g.inflexible else g.r_u * U[g.id] + g.r_v * V[g.id])
    for n, r in blk.balance.items():
        lam[n] = float(sol.duals[r]) / price_scale
    flows = {keys[k]: float(sol.x[f]) for k, f in enumerate(blk.flow)}
    angles = {n: float(sol.x[t]) for n, t in blk.theta.items()}
    sc = blk.scen
    return ScenarioResult(str(sc.id), float(sc.prob), X, U, V, flows, angles, lam, rho, cost)


def _offending_scenario(inst: MarketInstance):
    for sc in inst.scenarios:
        bld = lp.LpBuilder()
        xcols = {g.id: ("col", bld.add_var(f"x[{g.id}]", 0.0, 0.0, None)) for g in inst.generators}
        add_scenario_block(bld, inst, sc, xcols, cost_weight=1.0)
        if lp.solve(bld.build()).status == lp.INFEASIBLE:
            return sc.id
    return None


def build_slp(inst: MarketInstance):
    bld = lp.LpBuilder()
    xcols = {}
    for g in inst.generators:
        xcols[g.id] = bld.add_var(f"x[{g.id}]", 0.0, 0.0, inst.max_capacity(g))
    blocks = [add_scenario_block(bld, inst, sc, {k: ("col", v) for k, v in xcols.items()}, float(sc.prob))
              for sc in inst.scenarios]
    return bld, xcols, blocks


def solve_slp(inst: MarketInstance, spread=False) -> DispatchSolution:
    """Risk-neutral stochastic dispatch: min E[c X + r_u U + r_v V].

    With spread=True the reported pre-commitment is, among cost-optimal ones,
    the one whose largest share of a unit's capacity is smallest, so identical
    units split the commitment evenly; prices are unaffected.
    """
    bld, xcols, blocks = build_slp(inst)
    sol = lp.solve(bld.build())
    if sol.status == lp.INFEASIBLE:
        sid = _offending_scenario(inst)
        raise InfeasibleError(f"demand unservable in scenario {sid}", sid)
    if not sol.optimal:
        raise RuntimeError(f"dispatch LP failed: {sol.status} {sol.message}")
    x = {g: float(sol.x[j]) for g, j in xcols.items()}
    scen = [_read_block(inst, b, sol, float(b.scen.prob)) for b in blocks]
    out = DispatchSolution(x, scen, sol.objective)
    if spread:
        costs = list(bld.c)
        t = bld.add_var("maxshare", 1.0, 0.0, None)
        bld.c = [0.0] * (len(bld.c) - 1) + [1.0]
        bld.add_row([(j, c) for j, c in enumerate(costs) if c != 0.0], lp.LE, sol.objective, "costcap")
        for g in inst.generators:
            cap = inst.max_capacity(g)
            if cap > 0 and np.isfinite(cap):
                bld.add_row([(t, 1.0), (xcols[g.id], -1.0 / cap)], lp.GE, 0.0, f"share[{g.id}]")
        alt = lp.solve(bld.build())
        if alt.optimal:
            out.x = {g: float(alt.x[j]) for g, j in xcols.items()}
            for r, b in zip(out.scenarios, blocks):
                a = _read_block(inst, b, alt, 1.0)
                r.X, r.U, r.V, r.flows, r.angles = a.X, a.U, a.V, a.flows, a.angles
    return out


def recourse_program(inst: MarketInstance, x: dict, scenario: Scenario):
    bld = lp.LpBuilder()
    blk = add_scenario_block(bld, inst, scenario, {g.id: float(x.get(g.id, 0.0)) for g in inst.generators}, 1.0)
    return bld, blk


def _spread_deviations(inst, bld: lp.LpBuilder, blk: ScenarioBlock, cost: float):
    """Among cost-optimal dispatches, minimise the largest single-unit deviation."""
    costs = list(bld.c)
    t = bld.add_var("maxdev", 1.0, 0.0, None)
    bld.c = [0.0] * (len(bld.c) - 1) + [1.0]
    bld.add_row([(j, c) for j, c in enumerate(costs) if c != 0.0], lp.LE, cost, "costcap")
    for g in inst.generators:
        if not g.inflexible:
            bld.add_row([(t, 1.0), (blk.U[g.id], -1.0), (blk.V[g.id], -1.0)], lp.GE, 0.0, f"dev[{g.id}]")
    sol = lp.solve(bld.build())
    return sol if sol.optimal else None


def solve_recourse(inst: MarketInstance, x: dict, scenario, preference="min", resolve=True,
                   spread=False) -> ScenarioResult:
    """Real-time dispatch for one scenario given pre-commitment x, with resolved duals.

    With spread=True the reported dispatch is, among cost-optimal ones, the one
    whose largest single-unit deviation is smallest (identical units share
    deviations evenly); prices are unaffected.
    """
    if not isinstance(scenario, Scenario):
        scenario = inst.scenarios.by_id(scenario)
    if any(v < 0 for v in x.values()):
        raise ValueError("pre-commitment must be nonnegative")
    bld, blk = recourse_program(inst, x, scenario)
    prob = bld.build()
    sol = lp.solve(prob)
    if sol.status == lp.INFEASIBLE:
        raise InfeasibleError(f"scenario {scenario.id} infeasible", scenario.id)
    if not sol.optimal:
        raise RuntimeError(f"recourse LP failed: {sol.status}")
    if resolve:
        rows = [blk.balance[n] for n in inst.network.nodes] + [blk.nonant[g.id] for g in inst.generators]
        sol = lp.resolve_degenerate_duals(prob, sol, preference, rows)
    res = _read_block(inst, blk, sol, 1.0)
    res.cost = float(sol.objective)
    if spread:
        alt_sol = _spread_deviations(inst, bld, blk, res.cost)
        if alt_sol is not None:
            alt = _read_block(inst, blk, alt_sol, 1.0)
            res.X, res.U, res.V, res.flows, res.angles = alt.X, alt.U, alt.V, alt.flows, alt.angles
    return res


def solve_all_recourse(inst, x, preference="min", spread=False) -> DispatchSolution:
    scen = [solve_recourse(inst, x, sc, preference, spread=spread) for sc in inst.scenarios]
    obj = sum(s.prob * s.cost for s in scen)
    return DispatchSolution(dict(x), scen, obj)


@dataclass
class SettlementReport:
    omega: str
    generator_payments: dict
    consumer_charges: dict
    iso_net: float

    def to_dict(self):
        return {"omega": self.omega, "generator_payments": self.generator_payments,
                "consumer_charges": self.consumer_charges, "iso_net": self.iso_net}


def settle(inst: MarketInstance, result: ScenarioResult, check=True) -> SettlementReport:
    scen = inst.scenarios.by_id(result.omega)
    pay = {g.id: result.lam[g.node] * result.X[g.id] for g in inst.generators}
    charge = {n: result.lam[n] * inst.demand(scen, n) for n in inst.network.nodes}
    net = sum(charge.values()) - sum(pay.values())
    if check and net < -1e-6 * (1.0 + sum(abs(v) for v in charge.values())):
        raise AssertionError(f"ISO out of pocket by {-net:g} in scenario {result.omega}")
    return SettlementReport(result.omega, pay, charge, net)


def generator_profit(inst: MarketInstance, result: ScenarioResult, gen_id) -> float:
    g = inst.generator(gen_id)
    lam = result.lam[g.node]
    return (lam - g.c) * result.X[gen_id] - g.r_u * result.U[gen_id] - g.r_v * result.V[gen_id]


def expected_profit(inst, solution: DispatchSolution, gen_id) -> float:
    return sum(s.prob * generator_profit(inst, s, gen_id) for s in solution.scenarios)


def binding_signature(inst: MarketInstance, result: ScenarioResult, skip_deviation=()):
    """Which bounds are active: generator output at 0 / capacity, deviation direction, lines at limit."""
    scen = inst.scenarios.by_id(result.omega)
    sig = []
    for g in inst.generators:
        X = result.X[g.id]
        cap = inst.capacity(g, scen)
        sig.append("lo" if X <= BIND_TOL else ("hi" if X >= cap - BIND_TOL else "in"))
        if g.id not in skip_deviation and not g.inflexible:
            u, v = result.U[g.id], result.V[g.id]
            sig.append("up" if u > BIND_TOL else ("down" if v > BIND_TOL else "tie"))
    keys = _line_keys(inst.network)
    for k, ln in enumerate(inst.network.lines):
        f = result.flows[keys[k]]
        if np.isfinite(ln.capacity) and abs(f) >= ln.capacity - BIND_TOL:
            sig.append("+" if f > 0 else "-")
        else:
            sig.append("0")
    return tuple(sig)


class BindingSetChanged(RuntimeError):
    pass


def price_sensitivity(inst: MarketInstance, x: dict, delta: float, gen_id, scenarios=None) -> dict:
    """Change of the price at the generator's node when x[gen_id] moves by delta.

    Returns {omega: dlambda}. Raises BindingSetChanged when any scenario's
    binding set (other than the probed generator's own deviation direction)
    differs between the two solves.
    """
    g = inst.generator(gen_id)
    if delta == 0:
        return {str(s.id): 0.0 for s in (scenarios or inst.scenarios)}
    x2 = dict(x)
    x2[gen_id] = x[gen_id] + delta
    if x2[gen_id] < 0:
        raise ValueError("perturbed pre-commitment is negative")
    out = {}
    for sc in scenarios or inst.scenarios:
        a = solve_recourse(inst, x, sc)
        b = solve_recourse(inst, x2, sc)
        if binding_signature(inst, a, (gen_id,)) != binding_signature(inst, b, (gen_id,)):
            raise BindingSetChanged(f"binding set changed in scenario {sc.id}")
        out[str(sc.id)] = b.lam[g.node] - a.lam[g.node]
    return out
