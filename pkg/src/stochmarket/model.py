"""Problem instances, scenario sets and empirical distributions."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .risk import risk_to_dict

PROB_TOL = 1e-12
MERGE_TOL = 1e-9


@dataclass(frozen=True)
class Line:
    from_node: str
    to_node: str
    susceptance: float
    capacity: float = np.inf  # MW, inf means unconstrained


@dataclass(frozen=True)
class Network:
    nodes: tuple
    lines: tuple = ()
    voll: float = 10000.0

    def node_index(self, node) -> int:
        return self.nodes.index(node)

    def components(self) -> list[list[str]]:
        adj = {n: set() for n in self.nodes}
        for ln in self.lines:
            if ln.from_node in adj and ln.to_node in adj:
                adj[ln.from_node].add(ln.to_node)
                adj[ln.to_node].add(ln.from_node)
        seen, comps = set(), []
        for n in self.nodes:
            if n in seen:
                continue
            stack, comp = [n], []
            seen.add(n)
            while stack:
                u = stack.pop()
                comp.append(u)
                for v in sorted(adj[u]):
                    if v not in seen:
                        seen.add(v)
                        stack.append(v)
            comps.append(comp)
        return comps


@dataclass(frozen=True)
class Generator:
    id: str
    node: str
    c: float
    r_u: float
    r_v: float
    capacity: float = np.inf
    capacity_per_scenario: Mapping | None = None
    inflexible: bool = False  # no deviation from pre-commitment at all

    @property
    def deviation_cost(self) -> float:
        return np.inf if self.inflexible else self.r_u + self.r_v


@dataclass(frozen=True)
class Scenario:
    id: str
    prob: float | Fraction
    demand: Mapping = field(default_factory=dict)
    capacity_overrides: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple

    def __len__(self):
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    @property
    def probs(self) -> np.ndarray:
        return np.array([float(s.prob) for s in self.scenarios])

    def total_prob(self):
        if all(isinstance(s.prob, Fraction) for s in self.scenarios):
            return sum((s.prob for s in self.scenarios), Fraction(0))
        return float(np.sum(self.probs))

    def by_id(self, sid) -> Scenario:
        for s in self.scenarios:
            if str(s.id) == str(sid):
                return s
        raise KeyError(f"unknown scenario {sid!r}")


@dataclass(frozen=True)
class MarketInstance:
    network: Network
    generators: tuple
    scenarios: ScenarioSet
    risk: Mapping = field(default_factory=dict)
    name: str = ""

    @property
    def voll(self) -> float:
        return self.network.voll

    def generator(self, gid) -> Generator:
        for g in self.generators:
            if g.id == gid:
                return g
        raise KeyError(f"unknown generator {gid!r}")

    def capacity(self, gen: Generator, scen: Scenario) -> float:
        if gen.id in scen.capacity_overrides:
            return float(scen.capacity_overrides[gen.id])
        if gen.capacity_per_scenario and str(scen.id) in gen.capacity_per_scenario:
            return float(gen.capacity_per_scenario[str(scen.id)])
        return float(gen.capacity)

    def max_capacity(self, gen: Generator) -> float:
        return max(self.capacity(gen, s) for s in self.scenarios)

    def demand(self, scen: Scenario, node) -> float:
        return float(scen.demand.get(node, 0.0))


@dataclass(frozen=True)
class EmpiricalDistribution:
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        sup = np.asarray(self.support, dtype=float)
        pr = np.asarray(self.probs, dtype=float)
        if sup.ndim != 1 or sup.shape != pr.shape or len(sup) == 0:
            raise ValueError("support and probs must be non-empty 1-d arrays of equal length")
        if np.any(np.diff(sup) <= 0):
            raise ValueError("support must be strictly increasing")
        if np.any(pr < 0) or abs(pr.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probs", pr)

    @classmethod
    def from_samples(cls, values, probs, tol=MERGE_TOL) -> "EmpiricalDistribution":
        """Merge values within ``tol`` of each other and sort."""
        order = np.argsort(np.asarray(values, dtype=float), kind="stable")
        vals = np.asarray(values, dtype=float)[order]
        prs = np.asarray(probs, dtype=float)[order]
        sup, mass = [], []
        for v, p in zip(vals, prs):
            if sup and abs(v - sup[-1]) <= tol:
                mass[-1] += p
            else:
                sup.append(v)
                mass.append(p)
        return cls(np.array(sup), np.array(mass))

    def cdf(self, x) -> float:
        return float(self.probs[self.support <= x + MERGE_TOL].sum())

    def mean(self) -> float:
        return float(self.support @ self.probs)


def pseudoinverse_cdf(dist: EmpiricalDistribution, p: float) -> float:
    """Smallest support point x with F(x) >= p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    cum = np.cumsum(dist.probs)
    idx = int(np.searchsorted(cum, p - PROB_TOL, side="left"))
    return float(dist.support[min(idx, len(dist.support) - 1)])


def dispatch_distribution(solution, generator_id, tol=MERGE_TOL) -> EmpiricalDistribution:
    """Distribution of a generator's second-stage output across scenarios."""
    vals, probs = [], []
    for sc in solution.scenarios:
        if generator_id not in sc.X:
            raise KeyError(f"unknown generator {generator_id!r}")
        vals.append(sc.X[generator_id])
        probs.append(sc.prob)
    return EmpiricalDistribution.from_samples(vals, probs, tol)


def validate_instance(instance: MarketInstance) -> list[str]:
    """Return the list of violated invariants (empty when valid)."""
    out = []
    net = instance.network
    if len(set(net.nodes)) != len(net.nodes):
        out.append("duplicate node identifiers")
    if not (net.voll > 0):
        out.append("VOLL must be positive")
    for ln in net.lines:
        if ln.from_node not in net.nodes or ln.to_node not in net.nodes:
            out.append(f"line {ln.from_node}-{ln.to_node} references an unknown node")
        if not ln.susceptance > 0:
            out.append(f"line {ln.from_node}-{ln.to_node} susceptance must be positive")
        if not ln.capacity > 0:
            out.append(f"line {ln.from_node}-{ln.to_node} capacity must be positive")
    if len(net.components()) > 1:
        out.append("network is not connected")
    ids = [g.id for g in instance.generators]
    if len(set(ids)) != len(ids):
        out.append("duplicate generator identifiers")
    for g in instance.generators:
        if g.node not in net.nodes:
            out.append(f"generator {g.id} at unknown node {g.node}")
        if g.c < 0:
            out.append(f"generator {g.id} has negative marginal cost")
        if g.r_u < 0 or g.r_v < 0:
            out.append(f"generator {g.id} has negative deviation cost")
        for s in instance.scenarios:
            if instance.capacity(g, s) < 0:
                out.append(f"generator {g.id} has negative capacity in scenario {s.id}")
    if instance.generators and not any(g.inflexible or g.r_u + g.r_v > 0 for g in instance.generators):
        out.append("no inflexible generator")
    scs = instance.scenarios
    if len(scs) == 0:
        out.append("empty scenario set")
    else:
        if any(float(s.prob) <= 0 for s in scs):
            out.append("scenario probabilities must be positive")
        tot = scs.total_prob()
        if (tot != 1) if isinstance(tot, Fraction) else abs(tot - 1.0) > PROB_TOL:
            out.append("probabilities not normalized")
        for s in scs:
            for node, d in s.demand.items():
                if node not in net.nodes:
                    out.append(f"scenario {s.id} demand at unknown node {node}")
                elif d < 0:
                    out.append(f"scenario {s.id} has negative demand at {node}")
            total_cap = sum(instance.capacity(g, s) for g in instance.generators)
            if sum(s.demand.values()) > total_cap + 1e-9:
                out.append(f"scenario {s.id} demand exceeds total capacity")
    return out


# ---------------------------------------------------------------- JSON I/O

def _prob(v):
    if isinstance(v, str):
        return Fraction(v)
    return float(v)


def _cap(v):
    return np.inf if v is None else float(v)


def instance_from_dict(doc: dict) -> MarketInstance:
    nodes = tuple(str(n) for n in doc["nodes"])
    lines = tuple(
        Line(str(l["from"]), str(l["to"]), float(l.get("susceptance", 1.0)), _cap(l.get("capacity")))
        for l in doc.get("lines", [])
    )
    net = Network(nodes, lines, float(doc.get("voll", 10000.0)))
    gens = []
    for g in doc.get("generators", []):
        cps = g.get("capacity_per_scenario")
        gens.append(Generator(
            id=str(g["id"]), node=str(g["node"]), c=float(g["c"]),
            r_u=float(g.get("r_u", 0.0)), r_v=float(g.get("r_v", 0.0)),
            capacity=_cap(g.get("capacity")),
            capacity_per_scenario={str(k): float(v) for k, v in cps.items()} if cps else None,
            inflexible=bool(g.get("inflexible", False)),
        ))
    scs = []
    for s in doc.get("scenarios", []):
        scs.append(Scenario(
            id=str(s["id"]), prob=_prob(s["prob"]),
            demand={str(k): float(v) for k, v in s.get("demand", {}).items()},
            capacity_overrides={str(k): float(v) for k, v in s.get("capacity_overrides", {}).items()},
        ))
    return MarketInstance(net, tuple(gens), ScenarioSet(tuple(scs)), dict(doc.get("risk", {})),
                          str(doc.get("name", "")))


def load_instance(path) -> MarketInstance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def instance_to_dict(inst: MarketInstance) -> dict:
    def cap(v):
        return None if not np.isfinite(v) else v

    gens = []
    for g in inst.generators:
        d = {"id": g.id, "node": g.node, "c": g.c, "r_u": g.r_u, "r_v": g.r_v, "capacity": cap(g.capacity)}
        if g.capacity_per_scenario:
            d["capacity_per_scenario"] = dict(g.capacity_per_scenario)
        if g.inflexible:
            d["inflexible"] = True
        gens.append(d)
    return {
        "name": inst.name,
        "nodes": list(inst.network.nodes),
        "lines": [{"from": l.from_node, "to": l.to_node, "susceptance": l.susceptance,
                   "capacity": cap(l.capacity)} for l in inst.network.lines],
        "voll": inst.network.voll,
        "generators": gens,
        "scenarios": [{"id": s.id, "prob": str(s.prob) if isinstance(s.prob, Fraction) else s.prob,
                       "demand": dict(s.demand), "capacity_overrides": dict(s.capacity_overrides)}
                      for s in inst.scenarios],
        "risk": {k: (v if isinstance(v, dict) else risk_to_dict(v)) for k, v in inst.risk.items()},
    }


def instance_hash(inst_or_doc) -> str:
    doc = inst_or_doc if isinstance(inst_or_doc, dict) else instance_to_dict(inst_or_doc)
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()
