import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudauction.errors import CatalogError, HazardUndefinedError, IndexOutOfRange, InfeasibleAllocation, OffGridError
from cloudauction.model import (Allocation, MechanismTable, TypeDistribution, UserProfile, ValuationFunction,
                                build_catalog, build_grid, flat_index, is_feasible)


@pytest.mark.parametrize("sizes, group, rank, expected", [
    ([2, 2], 2, 1, 3),
    ([1], 1, 1, 1),
    ([3, 1, 2], 3, 2, 6),
    ([2, 2], 1, 2, 2),
    ([2, 2], 2, 2, 4),
    ([2, 3], 2, 3, 5),
])
def test_flat_index_examples(sizes, group, rank, expected):
    cat = build_catalog(sizes)
    assert flat_index(cat, group, rank) == expected
    assert cat.locate(expected) == (group, rank)


def test_catalog_sizes():
    cat = build_catalog([3, 1, 2])
    assert (cat.n_groups, cat.n_resources) == (3, 6)
    assert cat.offsets == (0, 3, 4)
    assert cat.group_of().tolist() == [0, 0, 0, 1, 2, 2]


@pytest.mark.parametrize("bad", [[], [0], [2, -1], [1.5], [True]])
def test_invalid_catalog(bad):
    with pytest.raises(CatalogError):
        build_catalog(bad)


@pytest.mark.parametrize("group, rank", [(0, 1), (3, 1), (1, 0), (1, 3), (2, 5)])
def test_flat_index_out_of_range(group, rank):
    with pytest.raises(IndexOutOfRange):
        flat_index(build_catalog([2, 2]), group, rank)


def test_locate_out_of_range():
    cat = build_catalog([2, 2])
    for j in (0, 5, -1):
        with pytest.raises(IndexOutOfRange):
            cat.locate(j)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=6))
def test_flat_index_bijection(sizes):
    cat = build_catalog(sizes)
    seen = [flat_index(cat, g, r) for g in range(1, len(sizes) + 1) for r in range(1, sizes[g - 1] + 1)]
    assert seen == list(range(1, cat.n_resources + 1))
    assert all(flat_index(cat, *cat.locate(j)) == j for j in seen)


@settings(max_examples=200)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
def test_supply_validator_matches_definition(n, m, seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-0.2, 0.8, size=(n, m))
    expected = bool(np.all(p >= 0) and np.all(p <= 1) and np.all(p.sum(axis=0) <= 1))
    # borderline cases within the tolerance are excluded by the sampling scale
    assert is_feasible(p) == expected


def test_allocation_rejects_infeasible():
    with pytest.raises(InfeasibleAllocation):
        Allocation(np.array([[0.7, 0.0], [0.6, 0.0]]))
    with pytest.raises(InfeasibleAllocation):
        Allocation(np.array([[1.2]]))
    with pytest.raises(InfeasibleAllocation):
        Allocation(np.array([0.5, 0.5]))


def test_allocation_group_sums_and_readonly():
    cat = build_catalog([2, 2])
    a = Allocation(np.array([[1, 0.5, 0, 1], [0, 0.5, 1, 0]]))
    np.testing.assert_allclose(a.group_sums(cat), [[1.5, 1], [0.5, 1]])
    with pytest.raises(ValueError):
        a.proportions[0, 0] = 0.0
    assert a == Allocation(a.proportions.copy())


@pytest.mark.parametrize("dist", [
    TypeDistribution.uniform(),
    TypeDistribution.uniform(0.01, 1.0),
    TypeDistribution.power_cdf(2.0),
    TypeDistribution.power_cdf(2.0, 0.01, 1.0),
    TypeDistribution.power_cdf(0.5, 0.2, 3.0),
])
def test_distribution_consistency(dist, rng):
    assert dist.cdf(dist.low) == pytest.approx(0.0, abs=1e-15)
    assert dist.cdf(dist.high) == pytest.approx(1.0)
    t = rng.uniform(dist.low + 1e-3, dist.high - 1e-3, 100)
    eps = 1e-6
    fd = (dist.cdf(t + eps) - dist.cdf(t - eps)) / (2 * eps)
    np.testing.assert_allclose(fd, dist.pdf(t), rtol=1e-6)
    assert np.all(np.diff(dist.cdf(np.sort(t))) >= 0)


def test_power_cdf_is_t_squared():
    d = TypeDistribution.power_cdf(2.0)
    assert d.cdf(0.5) == pytest.approx(0.25)
    assert d.pdf(0.5) == pytest.approx(1.0)


def test_point_mass():
    d = TypeDistribution.point_mass(0.6)
    assert d.cdf(0.59) == 0.0 and d.cdf(0.6) == 1.0
    with pytest.raises(HazardUndefinedError):
        d.pdf(0.6)


def test_custom_distribution_checks_bounds():
    with pytest.raises(ValueError):
        TypeDistribution.custom(lambda t: t / 2, lambda t: 0.5 + 0 * t, 0.0, 1.0)
    d = TypeDistribution.custom(lambda t: t ** 3, lambda t: 3 * t ** 2, 0.0, 1.0)
    assert d.pdf(0.5) == pytest.approx(0.75)


def test_invalid_distributions():
    with pytest.raises(ValueError):
        TypeDistribution.uniform(1.0, 0.0)
    with pytest.raises(ValueError):
        TypeDistribution.power_cdf(-1.0)


def test_user_profile_factor_checks():
    d = TypeDistribution.uniform()
    v = (ValuationFunction.linear(1.0),)
    with pytest.raises(ValueError):
        UserProfile(d, v, premium=-1.0)
    with pytest.raises(ValueError):
        UserProfile(d, v, discount=lambda t: float("inf"))
    prof = UserProfile(d, v, premium=lambda t: 2 * t)
    assert prof.premium_at(0.25) == pytest.approx(0.5)
    np.testing.assert_allclose(prof.discount_at(np.array([0.1, 0.2])), [0.0, 0.0])


def test_valuation_parameters_validated():
    with pytest.raises(ValueError):
        ValuationFunction.linear(0.0)
    with pytest.raises(ValueError):
        ValuationFunction("quadratic", 1.0)


@pytest.mark.parametrize("resolution", [2, 11, 51])
def test_grid_invariants(resolution):
    profs = [UserProfile(TypeDistribution.power_cdf(2.0, 0.01, 1.0), (ValuationFunction.linear(1.0),)),
             UserProfile(TypeDistribution.uniform(0.2, 0.7), (ValuationFunction.linear(1.0),))]
    g = build_grid(profs, resolution)
    for nodes, w, p, prof in zip(g.nodes, g.weights, g.probs, profs):
        assert nodes[0] == prof.type_dist.low and nodes[-1] == prof.type_dist.high
        assert np.all(np.diff(nodes) > 0)
        assert np.all(w > 0)
        assert w.sum() == pytest.approx(prof.type_dist.high - prof.type_dist.low)
        assert p.sum() == pytest.approx(1.0)


def test_grid_point_mass_and_lookup():
    profs = [UserProfile(TypeDistribution.uniform(), (ValuationFunction.linear(1.0),)),
             UserProfile(TypeDistribution.point_mass(0.6), (ValuationFunction.linear(1.0),))]
    g = build_grid(profs, 11)
    assert g.shape == (11, 1)
    assert g.weights[1].tolist() == [1.0] and g.probs[1].tolist() == [1.0]
    assert g.node_index(0, 0.3) == 3
    with pytest.raises(OffGridError):
        g.node_index(0, 0.33)


def test_mechanism_table_validation():
    profs = [UserProfile(TypeDistribution.uniform(), (ValuationFunction.linear(1.0),))]
    g = build_grid(profs, 5)
    z = MechanismTable.zeros(g, 1)
    assert z.allocation.shape == (5, 1, 1)
    assert z.cost_at(0, 2) == 0.0
    assert z.allocation_at((3,)) == Allocation.empty(1, 1)
    with pytest.raises(ValueError):
        MechanismTable(g, np.zeros((4, 1, 1)), (np.zeros(5),))
    with pytest.raises(ValueError):
        MechanismTable(g, np.zeros((5, 1, 1)), (np.full(5, np.nan),))
    with pytest.raises(InfeasibleAllocation):
        MechanismTable(g, np.full((5, 1, 1), 2.0), (np.zeros(5),))
