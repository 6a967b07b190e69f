import pytest

from stochmarket.fixtures import duopoly, m1
from stochmarket.model import load_instance
from stochmarket.properties import SUITES, precommit_monotonicity, price_jump_probe, run_suite


@pytest.mark.parametrize("suite", sorted(SUITES))
@pytest.mark.parametrize("name", ["m1.json", "m1_cvar.json", "duopoly_cvar.json"])
def test_suites_pass_on_reference_instances(data_dir, suite, name):
    results = run_suite(suite, load_instance(data_dir / name), seed=1)
    assert results
    for r in results:
        assert r.passed, r.to_dict()


def test_unknown_suite():
    with pytest.raises(KeyError):
        run_suite("nope", m1())


def test_precommit_monotonicity_on_m1():
    assert precommit_monotonicity(m1(), {"G1": 45.0}, {"G1": 20.0}) >= -1e-8


def test_price_jump_probe_across_own_dispatch():
    inst = m1()
    sc = inst.scenarios.by_id("s2")  # D = 30
    down = price_jump_probe(inst, {"G1": 31.0}, "G1", -2.0, sc)
    assert down.dlam == pytest.approx(4.0) and down.sign_ok
    up = price_jump_probe(inst, {"G1": 29.0}, "G1", 2.0, sc)
    assert up.dlam == pytest.approx(-4.0) and up.sign_ok
    same = price_jump_probe(inst, {"G1": 31.0}, "G1", 1.0, sc)
    assert same.dlam == pytest.approx(0.0)


def test_probe_skips_the_set_valued_tie():
    inst = m1()
    assert price_jump_probe(inst, {"G1": 30.0}, "G1", -1.0, inst.scenarios.by_id("s2")) is None


def test_probe_skips_boundary_dispatch():
    sc = m1().scenarios.by_id("s0")
    assert price_jump_probe(m1(), {"G1": 1.0}, "G1", -2.0, sc) is None
    # G1 idle in this scenario, so its price jump is not probed
    duo = duopoly()
    assert price_jump_probe(duo, {"G1": 0.0, "G2": 10.0}, "G1", 0.0, duo.scenarios.by_id("s0")) is None
