"""Reference instances used by the tests, the CLI examples and the README."""
from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from .model import Generator, Line, MarketInstance, Network, Scenario, ScenarioSet


def single_node(demands, probs=None, gens=None, voll=1000.0, name="single-node") -> MarketInstance:
    """One bus, demand scenarios, generators given as dicts."""
    n = len(demands)
    probs = probs if probs is not None else [Fraction(1, n)] * n
    gens = gens or [dict(id="G1", c=10.0, r_u=3.0, r_v=1.0, capacity=100.0)]
    generators = tuple(Generator(node="N1", **g) for g in gens)
    scen = tuple(Scenario(f"s{k}", p, {"N1": float(d)}) for k, (d, p) in enumerate(zip(demands, probs)))
    return MarketInstance(Network(("N1",), (), voll), generators, ScenarioSet(scen), {}, name)


def m1(risk=None) -> MarketInstance:
    """One node, one generator (c=10, r_u=3, r_v=1, G=100), demand 10..50 equally likely."""
    inst = single_node([10, 20, 30, 40, 50], name="M1")
    if risk:
        inst = MarketInstance(inst.network, inst.generators, inst.scenarios, dict(risk), inst.name)
    return inst


def duopoly(split=True) -> MarketInstance:
    """Two identical M1 generators sharing the M1 demand."""
    gens = [dict(id="G1", c=10.0, r_u=3.0, r_v=1.0, capacity=100.0),
            dict(id="G2", c=10.0, r_u=3.0, r_v=1.0, capacity=100.0)]
    return single_node([10, 20, 30, 40, 50], gens=gens, name="duopoly")


WIND_LEVELS = (30, 50, 60, 70, 90)
SIX_NODE_DETERMINISTIC = ("T1", "T2", "H1", "H2")


def six_node() -> MarketInstance:
    """Six-bus ring with two thermal units, two hydro units and two wind farms.

    Only line A-B is limited (150 MW); demand of 264 MW sits at bus A. Each wind
    farm takes one of five availability levels, all 25 combinations equally likely.
    """
    nodes = ("A", "B", "C", "D", "E", "F")
    ring = [("A", "B", 150.0), ("B", "C", None), ("C", "D", None), ("D", "E", None), ("E", "F", None),
            ("F", "A", None)]
    lines = tuple(Line(a, b, 1.0, np.inf if c is None else c) for a, b, c in ring)
    gens = (
        Generator("T1", "B", 40.0, 0.0, 0.0, 100.0, inflexible=True),
        Generator("T2", "D", 45.0, 0.0, 0.0, 100.0, inflexible=True),
        Generator("H1", "F", 42.0, 35.0, 20.0, 50.0),
        Generator("H2", "F", 80.0, 35.0, 20.0, 60.0),
        Generator("W1", "C", 0.0, 0.0, 0.0, 0.0),
        Generator("W2", "E", 0.0, 0.0, 0.0, 0.0),
    )
    combos = list(itertools.product(WIND_LEVELS, WIND_LEVELS))
    p = Fraction(1, len(combos))
    scen = tuple(Scenario(f"w{a}_{b}", p, {"A": 264.0}, {"W1": float(a), "W2": float(b)}) for a, b in combos)
    return MarketInstance(Network(nodes, lines, 1000.0), gens, ScenarioSet(scen), {}, "six-node")


def random_instance(rng: np.random.Generator, n_nodes=None, n_gens=None, n_scen=None) -> MarketInstance:
    """Small random network instance that is always feasible (ample local capacity)."""
    n_nodes = n_nodes or int(rng.integers(1, 4))
    n_gens = n_gens or int(rng.integers(1, 4))
    n_scen = n_scen or int(rng.integers(2, 6))
    nodes = tuple(f"N{k}" for k in range(n_nodes))
    lines = []
    for k in range(1, n_nodes):
        lines.append(Line(nodes[int(rng.integers(0, k))], nodes[k], float(rng.uniform(0.5, 2.0)),
                          float(rng.choice([20.0, 40.0, np.inf]))))
    if n_nodes >= 3 and rng.random() < 0.5:
        lines.append(Line(nodes[0], nodes[-1], float(rng.uniform(0.5, 2.0)), float(rng.choice([25.0, np.inf]))))
    gens = []
    for k in range(n_gens):
        gens.append(Generator(f"G{k}", nodes[int(rng.integers(0, n_nodes))], float(rng.integers(5, 40)),
                              float(rng.integers(1, 15)), float(rng.integers(1, 10)), float(rng.integers(30, 80))))
    # one big backstop unit per node keeps every scenario feasible
    for n in nodes:
        gens.append(Generator(f"B{n}", n, 200.0, 10.0, 5.0, 200.0))
    w = rng.dirichlet(np.ones(n_scen))
    w = np.maximum(w, 0.02)
    w = w / w.sum()
    scen = []
    for s in range(n_scen):
        dem = {n: float(rng.integers(0, 60)) for n in nodes}
        caps = {g.id: float(rng.integers(0, int(g.capacity) + 1)) for g in gens[:n_gens] if rng.random() < 0.3}
        scen.append(Scenario(f"s{s}", float(w[s]), dem, caps))
    probs = np.array([s.prob for s in scen])
    # renormalise exactly in floating point
    scen[-1] = Scenario(scen[-1].id, float(1.0 - probs[:-1].sum()), scen[-1].demand, scen[-1].capacity_overrides)
    return MarketInstance(Network(nodes, tuple(lines), 1000.0), tuple(gens), ScenarioSet(tuple(scen)), {}, "random")
