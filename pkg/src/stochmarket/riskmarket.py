"""Risk-averse market clearing with a complete set of scenario securities.

Every agent (each generator and the system operator) holds a risk set of
probability measures. The clearing LP minimises the sum of risk-adjusted
disutilities; securities W(omega) move risk between agents and clear to zero
in each scenario. The clearing duals, normalised, are the risk-adjusted
measure pi used to price the securities.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lp
from .dispatch import DispatchSolution, InfeasibleError, ScenarioResult, _line_keys, add_scenario_block
from .model import MarketInstance
from .risk import (ENUMERATION_BOUND, PolyhedralRiskSet, RiskSpec, add_risk_bound, intersection_point,
                   membership_residual, risk_from_dict, risk_premium_order_key, rho_disutility, separate)

ISO = "iso"
CUT_TOL = 1e-7
MAX_CUT_ROUNDS = 500
MEMBERSHIP_TOL = 1e-7


class EmptyIntersection(RuntimeError):
    pass


class CutsNotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class AgentRisk:
    agent: str
    risk: object  # RiskSpec or PolyhedralRiskSet


def agent_risks(inst: MarketInstance, overrides=None) -> list[AgentRisk]:
    """Risk sets of every generator plus the operator.

    Generators without an entry use the "default" entry when present, else are
    risk neutral. The operator defaults to the least risk-averse generator set.
    """
    raw = dict(inst.risk)
    if overrides:
        raw.update(overrides)
    parsed = {k: (v if isinstance(v, (RiskSpec, PolyhedralRiskSet)) else risk_from_dict(v)) for k, v in raw.items()}
    default = parsed.get("default", RiskSpec.neutral())
    out = [AgentRisk(g.id, parsed.get(g.id, default)) for g in inst.generators]
    if ISO in parsed:
        iso = parsed[ISO]
    else:
        probs = inst.scenarios.probs
        iso = min((a.risk for a in out), key=lambda r: risk_premium_order_key(r, probs), default=RiskSpec.neutral())
    out.append(AgentRisk(ISO, iso))
    return out


@dataclass
class RiskMarketSolution:
    dispatch: DispatchSolution
    theta: dict
    W: dict
    pi: np.ndarray
    objective: float
    membership: dict = field(default_factory=dict)
    cut_rounds: int = 0
    n_risk_rows: int = 0
    scenario_ids: tuple = ()

    @property
    def x(self):
        return self.dispatch.x

    def to_dict(self):
        d = self.dispatch.to_dict()
        d["objective"] = self.objective
        d["theta"] = dict(sorted(self.theta.items()))
        d["W"] = {k: list(map(float, v)) for k, v in sorted(self.W.items())}
        d["pi"] = [float(v) for v in self.pi]
        d["membership_residuals"] = dict(sorted(self.membership.items()))
        return d


def _agent_loss_terms(inst, blocks, gen_id):
    """Per-scenario linear cost terms of one generator."""
    g = inst.generator(gen_id)
    out = []
    for blk in blocks:
        t = [(blk.X[gen_id], g.c)]
        if not g.inflexible:
            t += [(blk.U[gen_id], g.r_u), (blk.V[gen_id], g.r_v)]
        out.append(t)
    return out


def solve_raslp(inst: MarketInstance, risks=None, method="auto", bound=ENUMERATION_BOUND, tol=CUT_TOL,
                max_rounds=MAX_CUT_ROUNDS) -> RiskMarketSolution:
    """Minimise the sum of agents' risk-adjusted disutilities with security trading.

    ``method`` is "extreme" (enumerate every risk set), "cuts" (separation
    oracle with lazily added rows), "epigraph" (tail-mean LP dual of each
    spectral risk set) or "auto" (enumerate when within ``bound`` points,
    otherwise the epigraph form; cuts for explicit sets that are skipped).
    """
    if risks is None or isinstance(risks, dict):
        agents = agent_risks(inst, risks)
    else:
        agents = list(risks)
    probs = inst.scenarios.probs
    S = len(probs)
    common = intersection_point(probs, [a.risk for a in agents])
    if common is None:
        raise EmptyIntersection("intersection of the agents' risk sets is empty")

    bld = lp.LpBuilder()
    xcols = {g.id: bld.add_var(f"x[{g.id}]", 0.0, 0.0, inst.max_capacity(g)) for g in inst.generators}
    blocks = [add_scenario_block(bld, inst, sc, {k: ("col", v) for k, v in xcols.items()}, None)
              for sc in inst.scenarios]
    names = [a.agent for a in agents]
    theta = {a: bld.add_var(f"theta[{a}]", 1.0, None, None) for a in names}
    W = {a: [bld.add_var(f"W[{a},{s}]", 0.0, None, None) for s in range(S)] for a in names}
    clear_rows = [bld.add_row([(W[a][s], 1.0) for a in names], lp.EQ, 0.0, f"clear[{s}]") for s in range(S)]
    gen_ids = {g.id for g in inst.generators}
    loss_terms = {a: (_agent_loss_terms(inst, blocks, a) if a in gen_ids else [[] for _ in range(S)]) for a in names}

    def risk_row(agent, mu):
        coeffs = [(theta[agent], 1.0)]
        for s in range(S):
            if mu[s] == 0.0:
                continue
            coeffs += [(j, -mu[s] * c) for j, c in loss_terms[agent][s]]
            coeffs.append((W[agent][s], mu[s]))
        bld.add_row(coeffs, lp.GE, 0.0, f"risk[{agent}]")

    lazy = {}
    n_rows = 0
    for a in agents:
        terms = [loss_terms[a.agent][s] + [(W[a.agent][s], -1.0)] for s in range(S)]
        if method == "cuts":
            lazy[a.agent] = a.risk
            risk_row(a.agent, common)
            n_rows += 1
        elif method in ("auto", "extreme", "epigraph"):
            n_rows += add_risk_bound(bld, theta[a.agent], terms, probs, a.risk, method, bound, f"risk[{a.agent}]")
        else:
            raise ValueError(f"unknown method {method!r}")

    warm = None
    rounds = 0
    while True:
        sol = lp.solve(bld.build(), warm=warm)
        if sol.status == lp.INFEASIBLE:
            raise InfeasibleError("risk-averse clearing infeasible")
        if sol.status == lp.UNBOUNDED:
            raise EmptyIntersection("empty effective intersection (clearing LP unbounded)")
        if not sol.optimal:
            raise RuntimeError(f"clearing LP failed: {sol.status} {sol.message}")
        warm = sol.warm
        added = 0
        for agent, risk in lazy.items():
            loss = np.array([sum(c * sol.x[j] for j, c in loss_terms[agent][s]) - sol.x[W[agent][s]]
                             for s in range(S)])
            mu = separate(loss, probs, risk)
            if mu @ loss > sol.x[theta[agent]] + tol:
                risk_row(agent, mu)
                added += 1
        n_rows += added
        if not added:
            break
        rounds += 1
        if rounds >= max_rounds:
            raise CutsNotConverged(f"cutting planes did not converge in {max_rounds} rounds")

    y = -np.array([sol.duals[r] for r in clear_rows])
    pi = np.maximum(y, 0.0)
    pi = pi / pi.sum() if pi.sum() > 0 else probs.copy()
    keys = _line_keys(inst.network)
    scen = []
    for s, blk in enumerate(blocks):
        scale = pi[s] if pi[s] > 1e-12 else None
        X, U, V, lam, rho = {}, {}, {}, {}, {}
        cost = 0.0
        for g in inst.generators:
            X[g.id] = float(sol.x[blk.X[g.id]])
            nd = float(sol.x[blk.U[g.id]] - sol.x[blk.V[g.id]])
            U[g.id], V[g.id] = max(nd, 0.0) + 0.0, max(-nd, 0.0) + 0.0
            rho[g.id] = float(sol.duals[blk.nonant[g.id]]) / scale if scale else 0.0
            cost += g.c * X[g.id] + (0.0 if g.inflexible else g.r_u * U[g.id] + g.r_v * V[g.id])
        for n, r in blk.balance.items():
            lam[n] = float(sol.duals[r]) / scale if scale else 0.0
        flows = {keys[k]: float(sol.x[f]) for k, f in enumerate(blk.flow)}
        angles = {n: float(sol.x[t]) for n, t in blk.theta.items()}
        scen.append(ScenarioResult(str(blk.scen.id), float(blk.scen.prob), X, U, V, flows, angles, lam, rho, cost))
    disp = DispatchSolution({g: float(sol.x[j]) for g, j in xcols.items()}, scen, float(sol.objective))
    res = RiskMarketSolution(
        dispatch=disp,
        theta={a: float(sol.x[theta[a]]) for a in names},
        W={a: np.array([sol.x[j] for j in W[a]]) for a in names},
        pi=pi,
        objective=float(sol.objective),
        cut_rounds=rounds,
        n_risk_rows=n_rows,
        scenario_ids=tuple(str(s.id) for s in inst.scenarios),
    )
    res.membership = {a.agent: membership_residual(pi, probs, a.risk) for a in agents}
    return res


def extract_risk_adjusted_measure(solution: RiskMarketSolution, risks=None, probs=None, tol=MEMBERSHIP_TOL):
    """pi with its membership certificates; raises if pi leaves any agent's risk set."""
    pi = np.asarray(solution.pi, dtype=float)
    if risks is not None:
        certs = {a.agent: membership_residual(pi, probs, a.risk) for a in risks}
    else:
        certs = dict(solution.membership)
    bad = {k: v for k, v in certs.items() if v > tol}
    if bad or np.any(pi < -1e-12) or abs(pi.sum() - 1.0) > 1e-8:
        raise AssertionError(f"risk-adjusted measure fails membership: {bad}")
    return pi, certs


def security_settlement(solution: RiskMarketSolution, omega_index: int) -> dict:
    """Per-agent payoff W(omega_hat) - sum_omega pi(omega) W(omega)."""
    pi = np.asarray(solution.pi, dtype=float)
    return {a: float(w[omega_index] - pi @ w) for a, w in solution.W.items()}


def policy_costs(inst: MarketInstance, policy) -> np.ndarray:
    """Per-scenario system cost of a dispatch policy (DispatchSolution or pre-commitment dict)."""
    if isinstance(policy, dict):
        from .dispatch import solve_all_recourse
        policy = solve_all_recourse(inst, policy)
    by_id = {s.omega: s for s in policy.scenarios}
    costs = []
    for sc in inst.scenarios:
        r = by_id[str(sc.id)]
        cost = 0.0
        for g in inst.generators:
            cost += g.c * r.X[g.id]
            if not g.inflexible:
                cost += g.r_u * r.U[g.id] + g.r_v * r.V[g.id]
        costs.append(cost)
    return np.array(costs)


def risk_adjusted_system_objective(inst: MarketInstance, policy, spec) -> float:
    """Risk-adjusted disutility of the system cost (upper-tail mixture of cost)."""
    costs = policy_costs(inst, policy)
    probs = inst.scenarios.probs
    if isinstance(spec, PolyhedralRiskSet):
        return float((spec.points @ costs).max())
    return rho_disutility(-costs, probs, spec)
