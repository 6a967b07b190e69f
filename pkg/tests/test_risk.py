from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochmarket.risk import (PolyhedralRiskSet, RiskEnumerationError, RiskSpec, extreme_points, intersection_point,
                              lower_tail_mean, membership_residual, q_beta, rho_disutility, risk_from_dict,
                              risk_to_dict, _tail_vertices, risk_value_lp, separate, worst_case_measure)

HALF = np.array([0.5, 0.5])


def test_q_beta_examples():
    assert q_beta(np.array([0.0, 10.0]), HALF, 0.5) == pytest.approx(2.5)
    assert q_beta(np.array([2.0, 10.0]), HALF, 0.5) == pytest.approx(2.0)
    assert q_beta(np.array([4.0, 4.0]), HALF, 0.3) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        q_beta(np.array([1.0, 2.0]), HALF, 0.0)


def test_lower_tail_mean_examples():
    assert lower_tail_mean(np.array([2.0, 10.0]), HALF, 0.5) == pytest.approx(2.0)
    assert lower_tail_mean(np.array([0.0, 10.0]), HALF, 0.25) == pytest.approx(0.0)
    assert lower_tail_mean(np.array([2.0, 10.0]), HALF, 1.0) == pytest.approx(6.0)


def test_rho_examples():
    z = np.array([2.0, 10.0])
    assert rho_disutility(z, HALF, RiskSpec.neutral()) == pytest.approx(-6.0)
    # full tail weight (kappa = 1/beta) puts all mass on the worst half
    assert rho_disutility(z, HALF, RiskSpec.cvar(2.0, 0.5)) == pytest.approx(-2.0)
    assert rho_disutility(z, HALF, RiskSpec.cvar(1.0, 0.5)) == pytest.approx(-4.0)
    assert rho_disutility(z + 3.0, HALF, RiskSpec.cvar(1.0, 0.5)) == pytest.approx(-7.0)


def test_worst_case_measure_examples():
    z = np.array([2.0, 10.0])
    assert np.allclose(worst_case_measure(z, HALF, RiskSpec.neutral()), HALF)
    assert np.allclose(worst_case_measure(z, HALF, RiskSpec.cvar(2.0, 0.5)), [1.0, 0.0])
    assert np.allclose(worst_case_measure(np.array([3.0, 3.0]), HALF, RiskSpec.cvar(2.0, 0.5)), HALF)


def test_extreme_point_counts():
    assert len(extreme_points(RiskSpec.neutral(), HALF)) == 1
    pts = extreme_points(RiskSpec.cvar(2.0, 0.5), HALF).points
    assert sorted(map(tuple, np.round(pts, 12))) == [(0.0, 1.0), (1.0, 0.0)]
    four = extreme_points(RiskSpec.cvar(2.0, 0.5), np.full(4, 0.25)).points
    assert len(four) == 6
    assert np.allclose(np.sort(four, axis=1), [[0, 0, 0.5, 0.5]] * 6)


def test_enumeration_bound():
    with pytest.raises(RiskEnumerationError):
        extreme_points(RiskSpec.cvar(2.0, 0.5), np.full(20, 0.05), bound=10)


def test_risk_value_lp_examples():
    pts = PolyhedralRiskSet(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert risk_value_lp(np.array([-2.0, -10.0]), pts) == pytest.approx(-2.0)
    assert risk_value_lp(np.array([1.0, 3.0]), PolyhedralRiskSet(np.array([HALF]))) == pytest.approx(2.0)


def test_spec_validation_and_serialisation():
    with pytest.raises(ValueError):
        RiskSpec.cvar(3.0, 0.5)
    spec = RiskSpec(1.0, ((0.25, 0.5), (0.75, 0.5)))
    assert spec.beta_bar == pytest.approx(0.5)
    assert risk_from_dict(risk_to_dict(spec)) == spec
    pts = PolyhedralRiskSet(np.array([[1.0, 0.0]]))
    assert np.allclose(risk_from_dict(risk_to_dict(pts)).points, pts.points)


def test_membership_and_separation():
    spec = RiskSpec.cvar(2.0, 0.5)
    assert membership_residual(HALF, HALF, spec) <= 1e-9
    assert membership_residual(np.array([1.0, 0.0]), HALF, RiskSpec.neutral()) > 0.1
    loss = np.array([5.0, 1.0])
    mu = separate(loss, HALF, spec)
    assert mu @ loss == pytest.approx(5.0)


def test_intersection_point():
    a = PolyhedralRiskSet(np.array([[1.0, 0.0]]))
    b = PolyhedralRiskSet(np.array([[0.0, 1.0]]))
    assert intersection_point(HALF, [a, b]) is None
    p = intersection_point(HALF, [RiskSpec.cvar(1.0, 0.5), RiskSpec.neutral()])
    assert np.allclose(p, HALF)


def _probs(n, rng):
    w = rng.uniform(0.1, 1.0, n)
    return w / w.sum()


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 7), st.floats(0.05, 1.0), st.floats(0.0, 1.0))
def test_coherence_axioms(seed, n, beta, kfrac):
    rng = np.random.default_rng(seed)
    probs = _probs(n, rng)
    spec = RiskSpec.cvar(kfrac / beta, beta)
    z1, z2 = rng.normal(0, 10, n), rng.normal(0, 10, n)
    r1, r2 = rho_disutility(z1, probs, spec), rho_disutility(z2, probs, spec)
    t, a = float(rng.uniform(0, 4)), float(rng.normal(0, 5))
    assert rho_disutility(t * z1, probs, spec) == pytest.approx(t * r1, abs=1e-9)
    assert rho_disutility(z1 + a, probs, spec) == pytest.approx(r1 - a, abs=1e-9)
    assert rho_disutility(z1 + np.abs(z2), probs, spec) <= r1 + 1e-9
    assert rho_disutility(z1 + z2, probs, spec) <= r1 + r2 + 1e-9
    mu = worst_case_measure(z1, probs, spec)
    assert mu.min() >= -1e-12 and mu.sum() == pytest.approx(1.0, abs=1e-12)
    assert float(-(mu @ z1)) == pytest.approx(r1, abs=1e-10)
    assert q_beta(z1, probs, beta) == pytest.approx(beta * (probs @ z1 - lower_tail_mean(z1, probs, beta)),
                                                     abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_duality_with_extreme_points(seed, n):
    rng = np.random.default_rng(seed)
    probs = _probs(n, rng)
    spec = RiskSpec(float(rng.uniform(0, 1.5)), ((0.3, 0.5), (0.8, 0.5)))
    z = rng.normal(0, 10, n)
    pts = extreme_points(spec, probs)
    assert risk_value_lp(-z, pts) == pytest.approx(rho_disutility(z, probs, spec), abs=1e-9)
    for p in pts.points:
        assert membership_residual(p, probs, spec) <= 1e-9


def test_rho_nondecreasing_in_kappa():
    rng = np.random.default_rng(0)
    probs = _probs(5, rng)
    z = rng.normal(0, 10, 5)
    vals = [rho_disutility(z, probs, RiskSpec.cvar(k, 0.4)) for k in np.linspace(0, 2.5, 6)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_two_level_vertices_are_exactly_the_hull_vertices(seed):
    spatial = pytest.importorskip("scipy.spatial")
    rng = np.random.default_rng(seed)
    probs = _probs(5, rng)
    spec = RiskSpec(1.0, ((0.3, 0.5), (0.7, 0.5)))
    pts = extreme_points(spec, probs).points
    # every candidate sum of per-level vertices, hull taken in the 4-d affine coordinates
    cand = np.array([(1 - spec.kappa * spec.beta_bar) * probs + spec.kappa * 0.5 * (a + b)
                     for a, b in product(_tail_vertices(probs, 0.3, 5000), _tail_vertices(probs, 0.7, 5000))])
    hull = spatial.ConvexHull(cand[:, :4])
    expected = np.unique(np.round(cand[hull.vertices], 10), axis=0)
    assert np.array_equal(np.unique(np.round(pts, 10), axis=0), expected)
