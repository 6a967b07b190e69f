"""The ten acceptance criteria, each at its stated tolerance and time budget."""
import time
import numpy as np
import pytest

from stochmarket.dispatch import expected_profit, solve_all_recourse, solve_recourse, solve_slp
from stochmarket.equilibrium import (PriceField, best_response_generator, candidate_from_dispatch,
                                     iterate_fixed_point, verify_equilibrium)
from stochmarket.fixtures import SIX_NODE_DETERMINISTIC, duopoly, m1, random_instance, single_node, six_node
from stochmarket.model import EmpiricalDistribution, MarketInstance
from stochmarket.newsvendor import (MODES, NO_TRADING, WITH_TRADING, RiskCoefficients, closed_form_precommit,
                                    in_tail_regime, oracle_agrees, precommit_quantile, profit_lower_bound)
from stochmarket.properties import precommit_monotonicity, price_jump_probe, straddle_probe
from stochmarket.risk import RiskSpec, rho_disutility, worst_case_measure
from stochmarket.riskmarket import ISO, extract_risk_adjusted_measure, solve_raslp

BETAS = np.round(np.arange(0.1, 1.0, 0.1), 1)
CVAR = RiskSpec.cvar(1.0, 0.5)


def test_criterion_01_closed_form_matches_oracle(acceptance):
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    agree, failures, outside_tail = 0, [], 0
    for k in range(200):
        n = int(rng.integers(3, 51))
        support = np.sort(rng.choice(np.arange(1, 2001), n, replace=False)).astype(float)
        dist = EmpiricalDistribution(support, rng.dirichlet(np.ones(n)))
        r_u, r_v = (float(100.0 - rng.uniform(0.0, 100.0)) for _ in range(2))
        beta = float(rng.choice(BETAS))
        spec = RiskSpec.cvar(float(rng.uniform(0.0, 1.0 / beta)), beta)
        bad = [mode for mode in MODES if not oracle_agrees(dist, r_u, r_v, spec, mode)[2]]
        agree += not bad
        if bad:
            failures.append(k)
            outside_tail += all(not in_tail_regime(r_u, r_v, spec, mode) for mode in bad)
    dt = time.perf_counter() - t0
    passed = agree == 200 and dt < 10.0
    acceptance(1, passed, f"{agree}/200 tuples agree in both modes; {outside_tail}/{len(failures)} disagreements "
               f"have the critical quantile outside the risk tail (first {failures[:5]})", dt)
    assert passed


def test_criterion_02_m1_fixture(acceptance):
    t0 = time.perf_counter()
    inst = m1()
    slp = solve_slp(inst)
    hi = solve_recourse(inst, slp.x, inst.scenarios.by_id("s4"))  # D = 50 > x
    lo = solve_recourse(inst, slp.x, inst.scenarios.by_id("s2"))  # D = 30 < x
    prices = PriceField.from_dispatch(inst, slp)
    demand = np.array([inst.demand(s, "N1") for s in inst.scenarios])
    x_nt = best_response_generator(inst, prices, "G1", CVAR, dispatch=demand).strategy.x
    x_wt = solve_raslp(inst, {"G1": CVAR, ISO: CVAR}).x["G1"]
    dt = time.perf_counter() - t0
    checks = {
        "x": slp.x["G1"] == pytest.approx(40.0, abs=1e-9),
        "objective": abs(slp.objective - 318.0) <= 1e-6,
        "lambda_above": hi.lam["N1"] == pytest.approx(13.0, abs=1e-9),
        "lambda_below": lo.lam["N1"] == pytest.approx(9.0, abs=1e-9),
        "no_trading": x_nt == pytest.approx(30.0, abs=1e-9),
        "with_trading": x_wt == pytest.approx(50.0, abs=1e-9),
    }
    passed = all(checks.values()) and dt < 1.0
    acceptance(2, passed, f"x={slp.x['G1']:g} obj={slp.objective:.6f} lambda={hi.lam['N1']:g}/{lo.lam['N1']:g} "
               f"no-trading x={x_nt:g} with-trading x={x_wt:g}", dt)
    assert passed, checks


def _reordered(inst):
    gens = tuple(reversed(inst.generators))
    return MarketInstance(inst.network, gens, inst.scenarios, inst.risk, inst.name)


def test_criterion_03_six_node(acceptance):
    t0 = time.perf_counter()
    six = six_node()
    sols = [solve_slp(six), solve_slp(six, spread=True), solve_slp(_reordered(six))]
    cum = sum(sols[0].x[g] for g in SIX_NODE_DETERMINISTIC)
    obj_spread = max(s.objective for s in sols) - min(s.objective for s in sols)
    sweep = []
    for beta in (1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1):
        sol = solve_raslp(six, {"default": RiskSpec.cvar(1.0 / beta, beta)})
        sweep.append(sum(sol.x[g] for g in SIX_NODE_DETERMINISTIC))
    dt = time.perf_counter() - t0
    monotone = all(b >= a - 1e-6 for a, b in zip(sweep, sweep[1:]))
    passed = abs(cum - 154.0) <= 1.0 and obj_spread <= 1e-6 and monotone and dt < 30.0
    acceptance(3, passed, f"risk-neutral cumulative {cum:.3f}, objective spread {obj_spread:.2e}, "
               f"sweep {[round(v, 2) for v in sweep]}", dt)
    assert passed


def test_criterion_04_precommit_monotonicity(acceptance):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    worst, pairs = np.inf, 0
    while pairs < 100:
        inst = random_instance(rng)
        x = {g.id: float(rng.uniform(0, inst.max_capacity(g))) for g in inst.generators}
        xh = {g.id: float(rng.uniform(0, inst.max_capacity(g))) for g in inst.generators}
        worst = min(worst, precommit_monotonicity(inst, x, xh))
        pairs += 1
    dt = time.perf_counter() - t0
    passed = worst >= -1e-8 and dt < 30.0
    acceptance(4, passed, f"{pairs} pairs, smallest <x - x_hat, rho - rho_hat> = {worst:.3e}", dt)
    assert passed


def test_criterion_05_price_jumps(acceptance):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    probes, skipped, worst_mag, signs_ok, jumps = 0, 0, 0.0, True, 0
    while probes < 100:
        inst = random_instance(rng)
        flex = [g for g in inst.generators if g.r_u + g.r_v > 0]
        g = flex[int(rng.integers(len(flex)))]
        sc = list(inst.scenarios)[int(rng.integers(len(inst.scenarios)))]
        x, delta = straddle_probe(inst, solve_slp(inst).x, g, sc, rng)
        pr = price_jump_probe(inst, x, g.id, delta, sc)
        if pr is None:
            skipped += 1
            continue
        probes += 1
        worst_mag = max(worst_mag, pr.magnitude_residual)
        signs_ok = signs_ok and pr.sign_ok
        jumps += abs(pr.dlam) > 1e-8
    dt = time.perf_counter() - t0
    passed = worst_mag <= 1e-8 and signs_ok and dt < 30.0
    acceptance(5, passed, f"{probes} probes ({jumps} with a jump, {skipped} skipped: preconditions not met), "
               f"worst magnitude residual {worst_mag:.2e}, direction ok={signs_ok}", dt)
    assert passed


def test_criterion_06_risk_coherence(acceptance):
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    worst = dict.fromkeys(("homogeneity", "translation", "monotonicity", "subadditivity", "dual"), 0.0)
    for _ in range(500):
        n = int(rng.integers(2, 12))
        probs = rng.dirichlet(np.ones(n))
        beta = float(rng.choice(BETAS))
        spec = RiskSpec.cvar(float(rng.uniform(0, 1 / beta)), beta)
        z1, z2 = rng.normal(0, 10, n), rng.normal(0, 10, n)
        r1, r2 = rho_disutility(z1, probs, spec), rho_disutility(z2, probs, spec)
        t, a = float(rng.uniform(0, 5)), float(rng.normal(0, 5))
        worst["homogeneity"] = max(worst["homogeneity"], abs(rho_disutility(t * z1, probs, spec) - t * r1))
        worst["translation"] = max(worst["translation"], abs(rho_disutility(z1 + a, probs, spec) - (r1 - a)))
        worst["monotonicity"] = max(worst["monotonicity"], rho_disutility(z1 + np.abs(z2), probs, spec) - r1)
        worst["subadditivity"] = max(worst["subadditivity"], rho_disutility(z1 + z2, probs, spec) - r1 - r2)
        for z, r in ((z1, r1), (z2, r2)):
            mu = worst_case_measure(z, probs, spec)
            valid = mu.min() >= -1e-12 and abs(mu.sum() - 1) <= 1e-12
            worst["dual"] = max(worst["dual"], abs(float(-(mu @ z)) - r) if valid else np.inf)
    dt = time.perf_counter() - t0
    passed = max(worst.values()) <= 1e-10 and dt < 5.0
    acceptance(6, passed, "500 pairs, worst residuals " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()), dt)
    assert passed


def test_criterion_07_risk_neutral_degeneracy(acceptance):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    obj_gap, eq_gap = 0.0, 0.0
    neutral = {"default": RiskSpec.neutral(), ISO: RiskSpec.neutral()}
    for _ in range(50):
        inst = random_instance(rng)
        slp = solve_slp(inst)
        ras = solve_raslp(inst, neutral)
        obj_gap = max(obj_gap, abs(ras.objective - slp.objective))
        rep = verify_equilibrium(inst, candidate_from_dispatch(inst, slp), {"default": RiskSpec.neutral()})
        eq_gap = max(eq_gap, rep.max_gap)
    dt = time.perf_counter() - t0
    passed = obj_gap <= 1e-6 and eq_gap <= 1e-6 and dt < 60.0
    acceptance(7, passed, f"50 instances, max |RASLP - SLP| {obj_gap:.2e}, max equilibrium gap {eq_gap:.2e}", dt)
    assert passed


def _random_spec(rng):
    if rng.random() < 0.3:
        b1, b2 = sorted(rng.choice(BETAS, 2, replace=False))
        spectrum = ((float(b1), 0.5), (float(b2), 0.5))
    else:
        spectrum = ((float(rng.choice(BETAS)), 1.0),)
    spec = RiskSpec(0.0, spectrum)
    return RiskSpec(float(rng.uniform(0.1, 1.0)) * spec.kappa_max, spectrum)


def test_criterion_08_risk_adjusted_measure(acceptance):
    rng = np.random.default_rng(8)
    t0 = time.perf_counter()
    worst = {"negativity": 0.0, "sum": 0.0, "membership": 0.0, "clearing": 0.0}
    for _ in range(50):
        inst = random_instance(rng)
        risks = {g.id: _random_spec(rng) for g in inst.generators}
        risks[ISO] = _random_spec(rng)
        sol = solve_raslp(inst, risks)
        worst["negativity"] = max(worst["negativity"], float(max(-sol.pi.min(), 0.0)))
        worst["sum"] = max(worst["sum"], abs(float(sol.pi.sum()) - 1.0))
        worst["membership"] = max(worst["membership"], max(sol.membership.values()))
        worst["clearing"] = max(worst["clearing"], float(np.abs(sum(sol.W.values())).max()))
        extract_risk_adjusted_measure(sol)
    dt = time.perf_counter() - t0
    passed = (worst["negativity"] == 0.0 and worst["sum"] <= 1e-8 and worst["membership"] <= 1e-7
              and worst["clearing"] <= 1e-8 and dt < 60.0)
    acceptance(8, passed, "50 instances, worst " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()), dt)
    assert passed


def _quantile_exact_fixture(rng, mode):
    """Single-unit market whose demand CDF reaches the critical level exactly at x*.

    The demand grid is fine (100-200 points) and no probability mass straddles
    the quantile, which is the discrete counterpart of an atomless CDF at x*.
    """
    beta = float(rng.choice(BETAS))
    spec = RiskSpec.cvar(float(rng.uniform(0.0, 1.0 / beta)), beta)
    r_u, r_v = float(rng.uniform(0.5, 50)), float(rng.uniform(0.5, 50))
    q = precommit_quantile(r_u, r_v, spec.kappa, spec.beta_bar, mode)
    n = int(rng.integers(100, 201))
    m = min(max(int(round(q * n)), 1), n - 1)
    probs = np.concatenate([np.full(m, q / m), np.full(n - m, (1.0 - q) / (n - m))])
    demand = np.sort(rng.choice(np.arange(1, 4001), n, replace=False)) / 10.0
    gens = [dict(id="G1", c=float(rng.uniform(5, 40)), r_u=r_u, r_v=r_v, capacity=500.0)]
    return single_node(demand, probs=list(probs), gens=gens), spec, r_u, r_v


def test_criterion_09_profit_bounds(acceptance):
    rng = np.random.default_rng(9)
    t0 = time.perf_counter()
    worst = np.inf
    for k in range(50):
        mode = NO_TRADING if k % 2 == 0 else WITH_TRADING
        inst, spec, r_u, r_v = _quantile_exact_fixture(rng, mode)
        dist = EmpiricalDistribution(np.array([inst.demand(s, "N1") for s in inst.scenarios]),
                                     inst.scenarios.probs)
        x_star = closed_form_precommit(dist, r_u, r_v, spec, mode)
        realised = expected_profit(inst, solve_all_recourse(inst, {"G1": x_star}), "G1")
        bound = profit_lower_bound(r_u, r_v, x_star, RiskCoefficients.of(spec), mode)
        worst = min(worst, realised - bound)
    # discrete caveat: M1 carries an atom of mass 0.2 exactly at x* = 30
    inst = m1()
    dist = EmpiricalDistribution(np.array([10.0, 20, 30, 40, 50]), np.full(5, 0.2))
    x_m1 = closed_form_precommit(dist, 3.0, 1.0, CVAR, NO_TRADING)
    m1_profit = expected_profit(inst, solve_all_recourse(inst, {"G1": x_m1}), "G1")
    m1_bound = profit_lower_bound(3.0, 1.0, x_m1, RiskCoefficients.of(CVAR), NO_TRADING)
    dt = time.perf_counter() - t0
    passed = worst >= -1e-6 and dt < 60.0
    acceptance(9, passed, f"50 fixtures, smallest E[profit] - bound {worst:.2e}; M1 atom counter-case "
               f"x*={x_m1:g}: E[profit] {m1_profit:g} vs bound {m1_bound:g} (violated by the atom)", dt)
    assert m1_profit < m1_bound - 1e-6
    assert passed


def test_criterion_10_duopoly_comparative_static(acceptance):
    t0 = time.perf_counter()
    inst = duopoly()
    totals, gaps = [], []
    for kappa in (0.0, 0.25, 0.5, 0.75, 1.0):
        cand = iterate_fixed_point(inst, {"default": RiskSpec.cvar(kappa, 0.5)})
        totals.append(sum(cand.x.values()))
        gaps.append(cand.max_gap)
    dt = time.perf_counter() - t0
    monotone = all(b <= a + 1e-6 for a, b in zip(totals, totals[1:]))
    passed = monotone and max(gaps) <= 1e-6 and dt < 30.0
    acceptance(10, passed, f"cumulative pre-commitment {[round(v, 4) for v in totals]}, "
               f"largest gap {max(gaps):.1e}", dt)
    assert passed
