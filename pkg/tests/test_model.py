from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochmarket.dispatch import solve_all_recourse
from stochmarket.fixtures import m1, random_instance, single_node, six_node
from stochmarket.model import (EmpiricalDistribution, dispatch_distribution, instance_from_dict, instance_hash,
                               instance_to_dict, load_instance, pseudoinverse_cdf, validate_instance)

M1_DIST = EmpiricalDistribution(np.array([10.0, 20, 30, 40, 50]), np.full(5, 0.2))


def test_m1_is_valid():
    assert validate_instance(m1()) == []
    assert validate_instance(six_node()) == []


def test_all_flexible_without_deviation_costs_is_flagged():
    inst = single_node([10, 20], gens=[dict(id="G", c=1.0, r_u=0.0, r_v=0.0, capacity=50.0)])
    assert "no inflexible generator" in validate_instance(inst)


def test_unnormalized_probabilities_are_flagged():
    inst = single_node([10, 20], probs=[0.4, 0.5])
    assert "probabilities not normalized" in validate_instance(inst)


def test_exact_fraction_probabilities_sum_to_one():
    assert m1().scenarios.total_prob() == Fraction(1)


@pytest.mark.parametrize("p,expected", [(0.75, 40.0), (0.0, 10.0), (1.0, 50.0), (0.6, 30.0), (0.61, 40.0)])
def test_pseudoinverse_cdf(p, expected):
    assert pseudoinverse_cdf(M1_DIST, p) == expected


def test_pseudoinverse_single_atom_and_range():
    d = EmpiricalDistribution(np.array([7.0]), np.array([1.0]))
    assert pseudoinverse_cdf(d, 0.3) == 7.0
    with pytest.raises(ValueError):
        pseudoinverse_cdf(d, 1.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=12, unique=True),
       st.floats(0, 1), st.floats(0, 1))
def test_pseudoinverse_monotone_and_left_continuous(values, p1, p2):
    d = EmpiricalDistribution.from_samples(values, np.full(len(values), 1.0 / len(values)))
    a, b = sorted((p1, p2))
    assert pseudoinverse_cdf(d, a) <= pseudoinverse_cdf(d, b)
    assert pseudoinverse_cdf(d, a) in d.support
    for x in d.support:
        assert pseudoinverse_cdf(d, min(d.cdf(x), 1.0)) <= x


def test_dispatch_distribution_m1():
    sol = solve_all_recourse(m1(), {"G1": 30.0})
    d = dispatch_distribution(sol, "G1")
    assert list(d.support) == [10, 20, 30, 40, 50]
    assert np.allclose(d.probs, 0.2)
    assert abs(d.probs.sum() - 1.0) <= 1e-12
    with pytest.raises(KeyError):
        dispatch_distribution(sol, "nope")


def test_from_samples_merges_equal_values():
    d = EmpiricalDistribution.from_samples([8.0, 8.0], [0.3, 0.7])
    assert list(d.support) == [8.0] and d.probs[0] == pytest.approx(1.0)


def test_json_round_trip_and_hash(data_dir):
    inst = load_instance(data_dir / "m1.json")
    doc = instance_to_dict(inst)
    again = instance_from_dict(doc)
    assert instance_to_dict(again) == doc
    assert instance_hash(inst) == instance_hash(again)
    assert instance_hash(inst) != instance_hash(six_node())


def test_random_instances_are_valid():
    rng = np.random.default_rng(3)
    for _ in range(20):
        assert validate_instance(random_instance(rng)) == []
