"""Competitive equilibrium without risk trading: agent best responses, iteration, verification.

Three kinds of price-taking agents face a nodal price field lambda_n(omega):
generators choose a pre-commitment and real-time output to maximise their
risk-adjusted profit, the system operator chooses network flows to maximise
its congestion rent, and the market-clearing agent sets prices against excess
demand. A candidate is an equilibrium when no agent can improve on its
strategy at the candidate prices.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import lp
from .dispatch import DispatchSolution, _line_keys, slack_nodes, solve_recourse, solve_slp
from .model import MarketInstance
from .risk import PolyhedralRiskSet, RiskSpec, add_risk_bound, rho_disutility
from .riskmarket import ISO, agent_risks

MC = "mc"
PRICE_TAKING = "price-taking"
FIXED_DISPATCH = "fixed-dispatch"
RULES = (PRICE_TAKING, FIXED_DISPATCH)
GAP_TOL = 1e-6


@dataclass
class PriceField:
    """lambda[s, n] for scenario s and node n, in $/MWh."""

    nodes: tuple
    scenario_ids: tuple
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.scenario_ids), len(self.nodes))

    def at(self, s: int, node) -> float:
        return float(self.values[s, self.nodes.index(node)])

    def validate(self, voll: float, tol=1e-9):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("prices must be finite")
        if self.values.min(initial=0.0) < -tol or self.values.max(initial=0.0) > voll + tol:
            raise ValueError("prices must lie in [0, VOLL]")

    def copy(self) -> "PriceField":
        return PriceField(self.nodes, self.scenario_ids, self.values.copy())

    @classmethod
    def uniform(cls, inst: MarketInstance, value: float) -> "PriceField":
        ids = tuple(str(s.id) for s in inst.scenarios)
        return cls(tuple(inst.network.nodes), ids, np.full((len(ids), len(inst.network.nodes)), float(value)))

    @classmethod
    def from_dispatch(cls, inst: MarketInstance, solution: DispatchSolution) -> "PriceField":
        nodes = tuple(inst.network.nodes)
        ids = tuple(str(s.id) for s in inst.scenarios)
        vals = np.array([[solution.scenario(sid).lam[n] for n in nodes] for sid in ids], dtype=float)
        return cls(nodes, ids, np.clip(vals, 0.0, inst.network.voll))

    def to_dict(self):
        return {sid: {n: float(self.values[s, k]) for k, n in enumerate(self.nodes)}
                for s, sid in enumerate(self.scenario_ids)}


@dataclass
class GeneratorStrategy:
    x: float
    X: np.ndarray
    U: np.ndarray
    V: np.ndarray

    def to_dict(self):
        return {"x": float(self.x), "X": [float(v) for v in self.X], "U": [float(v) for v in self.U],
                "V": [float(v) for v in self.V]}


@dataclass
class BestResponse:
    strategy: GeneratorStrategy
    value: float


@dataclass
class EquilibriumCandidate:
    prices: PriceField
    strategies: dict
    flows: np.ndarray
    gaps: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    rule: str = PRICE_TAKING
    sweeps: int = 0
    trace: list = field(default_factory=list)
    alternatives: list = field(default_factory=list)

    @property
    def x(self) -> dict:
        return {g: float(s.x) for g, s in self.strategies.items()}

    @property
    def max_gap(self) -> float:
        return max(self.gaps.values(), default=0.0)

    def to_dict(self):
        return {"prices": self.prices.to_dict(),
                "strategies": {g: s.to_dict() for g, s in sorted(self.strategies.items())},
                "flows": [[float(v) for v in row] for row in self.flows],
                "gaps": dict(sorted(self.gaps.items())), "values": dict(sorted(self.values.items())),
                "rule": self.rule, "sweeps": self.sweeps, "max_gap": self.max_gap,
                "alternatives": self.alternatives}


def generator_specs(inst: MarketInstance, specs=None) -> dict:
    """Risk set of every generator; a "default" entry covers the unnamed ones."""
    return {a.agent: a.risk for a in agent_risks(inst, specs) if a.agent != ISO}


def _risk_value(profit, probs, risk) -> float:
    """Risk-adjusted value -rho(profit)."""
    if isinstance(risk, PolyhedralRiskSet):
        return float((risk.points @ profit).min())
    return -rho_disutility(profit, probs, risk) + 0.0


def generator_profit_vector(inst, prices: PriceField, gen_id, strategy: GeneratorStrategy) -> np.ndarray:
    g = inst.generator(gen_id)
    lam = prices.values[:, prices.nodes.index(g.node)]
    return (lam - g.c) * strategy.X - g.r_u * strategy.U - g.r_v * strategy.V


def strategy_value(inst, prices, gen_id, risk, strategy) -> float:
    return _risk_value(generator_profit_vector(inst, prices, gen_id, strategy), inst.scenarios.probs, risk)


def best_response_generator(inst: MarketInstance, prices: PriceField, gen_id, spec, dispatch=None,
                            method="auto") -> BestResponse:
    """Maximise the generator's risk-adjusted profit at fixed prices.

    With dispatch given (one output per scenario) only the pre-commitment is
    chosen; otherwise output is chosen freely as well. The pre-commitment is
    boxed by the generator's largest capacity and deviations by the same bound.
    """
    if isinstance(spec, RiskSpec):
        spec.validate()
    g = inst.generator(gen_id)
    probs = inst.scenarios.probs
    node = prices.nodes.index(g.node)
    gmax = inst.max_capacity(g)
    bld = lp.LpBuilder()
    xc = bld.add_var("x", 0.0, 0.0, gmax)
    theta = bld.add_var("theta", 1.0, None, None)
    cols = []
    terms = []
    for s, sc in enumerate(inst.scenarios):
        cap = inst.capacity(g, sc)
        lo, hi = 0.0, cap
        if dispatch is not None:
            lo = hi = float(dispatch[s])
        X = bld.add_var(f"X[{s}]", 0.0, lo, hi)
        dev_ub = 0.0 if g.inflexible else gmax
        U = bld.add_var(f"U[{s}]", 0.0, 0.0, dev_ub)
        V = bld.add_var(f"V[{s}]", 0.0, 0.0, dev_ub)
        bld.add_row([(X, 1.0), (U, -1.0), (V, 1.0), (xc, -1.0)], lp.EQ, 0.0, f"nonant[{s}]")
        cols.append((X, U, V))
        terms.append([(X, g.c - prices.values[s, node]), (U, g.r_u), (V, g.r_v)])
    add_risk_bound(bld, theta, terms, probs, spec, method)
    sol = lp.solve(bld.build())
    if not sol.optimal:
        raise RuntimeError(f"generator best response failed: {sol.status} {sol.message}")
    X = np.array([sol.x[c[0]] for c in cols])
    x = float(sol.x[xc])
    net = X - x
    strat = GeneratorStrategy(x, X, np.maximum(net, 0.0) + 0.0, np.maximum(-net, 0.0) + 0.0)
    return BestResponse(strat, strategy_value(inst, prices, gen_id, spec, strat))


def _injections(inst, flows_row) -> np.ndarray:
    """Net inflow tau_n of a flow vector, per node."""
    nodes = list(inst.network.nodes)
    tau = np.zeros(len(nodes))
    for k, ln in enumerate(inst.network.lines):
        tau[nodes.index(ln.to_node)] += flows_row[k]
        tau[nodes.index(ln.from_node)] -= flows_row[k]
    return tau


def _flow_bound(inst) -> float:
    cap = sum(inst.max_capacity(g) for g in inst.generators)
    dem = sum(max(inst.demand(s, n) for s in inst.scenarios) for n in inst.network.nodes) if len(inst.scenarios) else 0
    return float(cap + dem + 1.0)


def _iso_scenario(inst, lam_row, big):
    net = inst.network
    nodes = list(net.nodes)
    bld = lp.LpBuilder()
    slack = slack_nodes(inst)
    th = {n: bld.add_var(f"theta[{n}]", 0.0, 0.0 if n in slack else None, 0.0 if n in slack else None)
          for n in nodes}
    fl = []
    for k, ln in enumerate(net.lines):
        cap = min(ln.capacity, big)
        # maximise sum_n lambda_n tau_n: flow k earns lambda_to - lambda_from
        gain = lam_row[nodes.index(ln.to_node)] - lam_row[nodes.index(ln.from_node)]
        f = bld.add_var(f"F[{k}]", -gain, -cap, cap)
        fl.append(f)
        bld.add_row([(f, 1.0), (th[ln.from_node], -ln.susceptance), (th[ln.to_node], ln.susceptance)],
                    lp.EQ, 0.0, f"flowdef[{k}]")
    if not fl:
        return np.zeros(0), 0.0
    sol = lp.solve(bld.build())
    if not sol.optimal:
        raise RuntimeError(f"operator best response failed: {sol.status}")
    best = -sol.objective
    # among optimal flows prefer the smallest total |F|
    gains = [-c for c in bld.c[len(nodes):len(nodes) + len(fl)]]
    bld.add_row([(f, gk) for f, gk in zip(fl, gains)], lp.GE, best - 1e-9 * (1.0 + abs(best)), "rent")
    bld.c = [0.0] * len(bld.c)
    for f in fl:
        t = bld.add_var("", 1.0, 0.0, None)
        bld.add_row([(t, 1.0), (f, -1.0)], lp.GE, 0.0)
        bld.add_row([(t, 1.0), (f, 1.0)], lp.GE, 0.0)
    sol2 = lp.solve(bld.build())
    x = sol2.x if sol2.optimal else sol.x
    return np.array([x[f] + 0.0 for f in fl]), best


def best_response_iso(inst: MarketInstance, prices: PriceField):
    """Congestion-rent maximising flows per scenario, zero flow on ties.

    Returns (flows[s, line], expected rent). Uncapacitated lines are bounded
    by total capacity plus total peak demand so the problem stays bounded.
    """
    big = _flow_bound(inst)
    rows, value = [], 0.0
    for s, sc in enumerate(inst.scenarios):
        f, v = _iso_scenario(inst, prices.values[s], big)
        rows.append(f)
        value += float(sc.prob) * v
    return np.array(rows).reshape(len(rows), len(inst.network.lines)), value


def iso_value(inst, prices: PriceField, flows) -> float:
    return float(sum(float(sc.prob) * prices.values[s] @ _injections(inst, flows[s])
                     for s, sc in enumerate(inst.scenarios)))


def excess_supply(inst, strategies: dict, flows) -> np.ndarray:
    """Generation plus net inflow minus demand, per scenario and node."""
    nodes = list(inst.network.nodes)
    out = np.zeros((len(inst.scenarios), len(nodes)))
    for s, sc in enumerate(inst.scenarios):
        out[s] = _injections(inst, flows[s])
        for g in inst.generators:
            out[s, nodes.index(g.node)] += strategies[g.id].X[s]
        for k, n in enumerate(nodes):
            out[s, k] -= inst.demand(sc, n)
    return out


def best_response_market_clearing(excess, prices: PriceField, voll: float, tol=1e-9) -> PriceField:
    """VOLL where demand exceeds supply, zero where supply exceeds demand, unchanged otherwise."""
    e = np.asarray(excess, dtype=float)
    vals = prices.values.copy()
    vals[e < -tol] = voll
    vals[e > tol] = 0.0
    return PriceField(prices.nodes, prices.scenario_ids, vals)


def market_clearing_gap(inst, prices: PriceField, excess) -> float:
    voll = inst.network.voll
    probs = inst.scenarios.probs
    e = np.asarray(excess, dtype=float)
    per = voll * np.maximum(-e, 0.0) + prices.values * e
    return float(np.maximum(probs @ per.sum(axis=1), 0.0)) if len(probs) else 0.0


def candidate_from_dispatch(inst: MarketInstance, solution: DispatchSolution, prices=None) -> EquilibriumCandidate:
    """Strategy profile of a dispatch solution, priced at its own duals unless prices are given."""
    prices = prices if prices is not None else PriceField.from_dispatch(inst, solution)
    keys = _line_keys(inst.network)
    ids = [str(s.id) for s in inst.scenarios]
    strategies = {}
    for g in inst.generators:
        X = np.array([solution.scenario(sid).X[g.id] for sid in ids], dtype=float)
        x = float(solution.x[g.id])
        net = X - x
        strategies[g.id] = GeneratorStrategy(x, X, np.maximum(net, 0.0) + 0.0, np.maximum(-net, 0.0) + 0.0)
    flows = np.array([[solution.scenario(sid).flows[k] for k in keys] for sid in ids], dtype=float)
    return EquilibriumCandidate(prices, strategies, flows.reshape(len(ids), len(keys)))


def perturb_candidate(cand: EquilibriumCandidate, gen_id, dx: float) -> EquilibriumCandidate:
    """Shift one generator's pre-commitment, keeping its output and re-netting deviations."""
    out = copy.deepcopy(cand)
    st = out.strategies[gen_id]
    st.x = max(st.x + dx, 0.0)
    net = st.X - st.x
    st.U, st.V = np.maximum(net, 0.0) + 0.0, np.maximum(-net, 0.0) + 0.0
    out.gaps, out.values = {}, {}
    return out


@dataclass
class GapReport:
    gaps: dict
    values: dict
    tol: float
    rule: str

    @property
    def ok(self) -> bool:
        return all(v <= self.tol for v in self.gaps.values())

    @property
    def max_gap(self) -> float:
        return max(self.gaps.values(), default=0.0)

    def to_dict(self):
        return {"gaps": dict(sorted(self.gaps.items())), "values": dict(sorted(self.values.items())),
                "tol": self.tol, "rule": self.rule, "equilibrium": self.ok}


def verify_equilibrium(inst: MarketInstance, cand: EquilibriumCandidate, specs=None, tol=GAP_TOL,
                       rule=PRICE_TAKING) -> GapReport:
    """Best-response gap of every agent at the candidate prices.

    rule "price-taking" lets generators re-choose output too; "fixed-dispatch"
    holds each generator's output at the candidate's and re-optimises only
    the pre-commitment.
    """
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
    if not inst.generators and not len(inst.scenarios):
        return GapReport({}, {}, tol, rule)
    risks = generator_specs(inst, specs)
    gaps, values = {}, {}
    for g in inst.generators:
        st = cand.strategies[g.id]
        cur = strategy_value(inst, cand.prices, g.id, risks[g.id], st)
        br = best_response_generator(inst, cand.prices, g.id, risks[g.id],
                                     dispatch=st.X if rule == FIXED_DISPATCH else None)
        values[g.id] = cur
        gaps[g.id] = max(br.value - cur, 0.0)
    if len(inst.scenarios):
        _, best = best_response_iso(inst, cand.prices)
        cur = iso_value(inst, cand.prices, cand.flows)
        values[ISO] = cur
        gaps[ISO] = max(best - cur, 0.0)
        ex = excess_supply(inst, cand.strategies, cand.flows)
        values[MC] = float(inst.scenarios.probs @ (-(cand.prices.values * ex)).sum(axis=1))
        gaps[MC] = market_clearing_gap(inst, cand.prices, ex)
    return GapReport(gaps, values, tol, rule)


def _price_step(inst: MarketInstance) -> np.ndarray:
    """Per-node step scale 1/(r_u + r_v) of the cheapest-to-deviate flexible unit there."""
    out = []
    for n in inst.network.nodes:
        sums = [g.r_u + g.r_v for g in inst.generators if g.node == n and not g.inflexible and g.r_u + g.r_v > 0]
        out.append(1.0 / min(sums) if sums else 1.0)
    return np.array(out)


def _operator_profile(inst, x: dict):
    """Real-time dispatch and flows chosen by the operator for pre-commitment x."""
    keys = _line_keys(inst.network)
    res = [solve_recourse(inst, x, sc, resolve=False, spread=True) for sc in inst.scenarios]
    X = {g.id: np.array([r.X[g.id] for r in res]) for g in inst.generators}
    flows = np.array([[r.flows[k] for k in keys] for r in res]).reshape(len(res), len(keys))
    return X, flows


def _strategies(inst, x, X) -> dict:
    out = {}
    for g in inst.generators:
        net = X[g.id] - x[g.id]
        out[g.id] = GeneratorStrategy(float(x[g.id]), X[g.id], np.maximum(net, 0.0) + 0.0, np.maximum(-net, 0.0) + 0.0)
    return out


def iterate_fixed_point(inst: MarketInstance, specs=None, damping=1.0, max_iters=100, tol=GAP_TOL,
                        rule=FIXED_DISPATCH) -> EquilibriumCandidate:
    """Damped best-response search for an equilibrium candidate.

    Prices start at the risk-neutral dispatch duals. Each sweep moves every
    generator's pre-commitment toward its best response to the current
    profile (responses are independent within a sweep), lets the operator
    re-dispatch the new pre-commitments (deviations spread evenly among
    cost-equivalent units), then nudges prices against the remaining excess
    supply, clamped to [0, VOLL]. Stops once every gap is within tol or after
    max_iters sweeps and returns the candidate with the smallest largest gap.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
    risks = generator_specs(inst, specs)
    slp = solve_slp(inst, spread=True)
    prices = PriceField.from_dispatch(inst, slp)
    voll = inst.network.voll
    step = _price_step(inst)
    x = dict(slp.x)
    X, flows = _operator_profile(inst, x)

    def evaluate(sweep):
        cand = EquilibriumCandidate(prices.copy(), _strategies(inst, x, X), flows.copy(), rule=rule, sweeps=sweep)
        rep = verify_equilibrium(inst, cand, risks, tol, rule)
        cand.gaps, cand.values = rep.gaps, rep.values
        return cand

    cand = evaluate(0)
    best, trace, zero_gap = cand, [], []

    def record(c):
        trace.append({"sweep": c.sweeps, "x": c.x, "gaps": dict(sorted(c.gaps.items())),
                      "prices": [[float(v) for v in row] for row in c.prices.values]})
        if c.max_gap <= tol:
            prof = {g: round(v, 9) for g, v in sorted(c.x.items())}
            if prof not in zero_gap:
                zero_gap.append(prof)

    record(cand)
    sweep = 0
    while best.max_gap > tol and sweep < max_iters:
        sweep += 1
        # best responses against the same profile, then one re-dispatch
        targets = {g.id: best_response_generator(inst, prices, g.id, risks[g.id],
                                                 dispatch=X[g.id] if rule == FIXED_DISPATCH else None).strategy.x
                   for g in inst.generators}
        for gid, target in targets.items():
            new = x[gid] + damping * (target - x[gid])
            x[gid] = target if abs(new - target) <= 1e-9 * (1.0 + abs(target)) else new
        X, flows = _operator_profile(inst, x)
        ex = excess_supply(inst, _strategies(inst, x, X), flows)
        prices = PriceField(prices.nodes, prices.scenario_ids,
                            np.clip(prices.values - damping * step * ex, 0.0, voll))
        cand = evaluate(sweep)
        record(cand)
        if cand.max_gap < best.max_gap:
            best = cand
    best.trace = trace
    best.alternatives = zero_gap
    return best
