import numpy as np
import pytest

from cloudauction.model import TypeDistribution, UserProfile, ValuationFunction, build_catalog, build_grid
from cloudauction.scenario import preset
from cloudauction.solver import solve_mechanism

V = ValuationFunction


def posted_price_setup(resolution=201):
    cat = build_catalog([1])
    profiles = [UserProfile(TypeDistribution.uniform(), (V.linear(10.0),))]
    return cat, profiles, build_grid(profiles, resolution)


def solved_preset(name, resolution=51, case=None):
    cfg = preset(name).with_resolution(resolution)
    profiles = cfg.profiles(case)
    mech = solve_mechanism(cfg.catalog, profiles, build_grid(profiles, resolution))
    return cfg.catalog, profiles, mech


@pytest.fixture
def cat22():
    return build_catalog([2, 2])


@pytest.fixture(scope="session")
def example1():
    return solved_preset("example1-basic", 51)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
