import numpy as np
import pytest

from stochmarket import lp
from stochmarket.dispatch import recourse_program
from stochmarket.fixtures import m1

scipy_opt = pytest.importorskip("scipy.optimize")


def _small():
    # min -x - y  s.t. x + y <= 4, x - y >= -2, 0 <= x <= 3, y >= 0
    b = lp.LpBuilder()
    x = b.add_var("x", -1.0, 0.0, 3.0)
    y = b.add_var("y", -1.0, 0.0, None)
    b.add_row([(x, 1), (y, 1)], lp.LE, 4)
    b.add_row([(x, 1), (y, -1)], lp.GE, -2)
    return b.build()


def test_optimal_objective_and_certificates():
    p = _small()
    s = lp.solve(p)
    assert s.optimal
    assert s.objective == pytest.approx(-4.0)
    assert lp.primal_residual(p, s.x) <= 1e-9
    assert lp.dual_objective(p, s) == pytest.approx(s.objective)
    assert lp.complementary_slackness(p, s) <= 1e-9


def test_infeasible_status():
    b = lp.LpBuilder()
    x = b.add_var("x", 1.0, 0.0, 1.0)
    b.add_row([(x, 1)], lp.GE, 2)
    assert lp.solve(b.build()).status == lp.INFEASIBLE


def test_unbounded_status():
    b = lp.LpBuilder()
    x = b.add_var("x", -1.0, 0.0, None)
    b.add_row([(x, 1)], lp.GE, 1)
    assert lp.solve(b.build()).status == lp.UNBOUNDED


def test_check_rejects_bad_input():
    p = _small()
    p.senses[0] = "<>"
    with pytest.raises(ValueError):
        lp.solve(p)


def test_free_and_equality_rows():
    b = lp.LpBuilder()
    x = b.add_var("x", 1.0, None, None)
    y = b.add_var("y", 2.0, 0.0, None)
    b.add_row([(x, 1), (y, 1)], lp.EQ, 3)
    b.add_row([(x, 1)], lp.GE, -5)
    s = lp.solve(b.build())
    assert s.optimal
    assert s.x[0] == pytest.approx(3.0)
    assert s.duals[0] == pytest.approx(1.0)


def _random_lp(rng):
    m, n = int(rng.integers(2, 7)), int(rng.integers(2, 8))
    A = rng.integers(-4, 5, size=(m, n)).astype(float)
    x0 = rng.uniform(0, 3, n)
    senses = [lp.LE if rng.random() < 0.5 else (lp.GE if rng.random() < 0.7 else lp.EQ) for _ in range(m)]
    act = A @ x0
    rhs = np.array([a + (1.0 if s == lp.LE else (-1.0 if s == lp.GE else 0.0)) for a, s in zip(act, senses)])
    c = rng.integers(-5, 6, n).astype(float)
    ub = np.where(rng.random(n) < 0.5, 5.0, np.inf)
    b = lp.LpBuilder()
    for j in range(n):
        b.add_var(f"v{j}", c[j], 0.0, ub[j])
    for i in range(m):
        b.add_row([(j, A[i, j]) for j in range(n)], senses[i], rhs[i])
    return b.build(), A, rhs, senses, c, ub


@pytest.mark.parametrize("seed", range(40))
def test_matches_highs_on_random_programs(seed):
    p, A, rhs, senses, c, ub = _random_lp(np.random.default_rng(seed))
    le = [i for i, s in enumerate(senses) if s == lp.LE]
    ge = [i for i, s in enumerate(senses) if s == lp.GE]
    eq = [i for i, s in enumerate(senses) if s == lp.EQ]
    A_ub = np.vstack([A[le], -A[ge]]) if le or ge else None
    b_ub = np.concatenate([rhs[le], -rhs[ge]]) if le or ge else None
    ref = scipy_opt.linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A[eq] if eq else None, b_eq=rhs[eq] if eq else None,
                            bounds=[(0, None if np.isinf(u) else u) for u in ub], method="highs")
    ours = lp.solve(p)
    if ref.status == 3:
        assert ours.status == lp.UNBOUNDED
        return
    assert ref.status == 0
    assert ours.optimal
    assert ours.objective == pytest.approx(ref.fun, abs=1e-7)
    assert lp.dual_objective(p, ours) == pytest.approx(ours.objective, abs=1e-7)


def test_warm_start_after_adding_a_row():
    b = lp.LpBuilder()
    x = b.add_var("x", -1.0, 0.0, 10.0)
    y = b.add_var("y", -2.0, 0.0, 10.0)
    b.add_row([(x, 1), (y, 1)], lp.LE, 12)
    first = lp.solve(b.build())
    b.add_row([(y, 1)], lp.LE, 4)
    cold = lp.solve(b.build())
    warm = lp.solve(b.build(), warm=first.warm)
    assert warm.optimal
    assert warm.objective == pytest.approx(cold.objective)
    assert warm.iterations <= cold.iterations


def test_resolve_degenerate_duals_picks_endpoint():
    inst = m1()
    sc = inst.scenarios.by_id("s3")  # D = 40
    bld, blk = recourse_program(inst, {"G1": 40.0}, sc)
    p = bld.build()
    s = lp.solve(p)
    rows = list(blk.balance.values())
    lo = lp.resolve_degenerate_duals(p, s, "min", rows)
    hi = lp.resolve_degenerate_duals(p, s, "max", rows)
    assert lo.duals[rows[0]] == pytest.approx(9.0)
    assert hi.duals[rows[0]] == pytest.approx(13.0)
    assert lo.objective == s.objective
    with pytest.raises(ValueError):
        lp.resolve_degenerate_duals(p, s, "middle")


def test_write_mps(tmp_path):
    path = tmp_path / "small.mps"
    lp.write_mps(_small(), path)
    text = path.read_text()
    assert text.startswith("NAME") and "ENDATA" in text
