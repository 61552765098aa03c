"""Revenue-optimal allocation and pricing of substitutable and complementary resources."""

from .errors import AuctionError
from .model import (Allocation, MechanismTable, ResourceCatalog, TypeDistribution, TypeGrid, UserProfile,
                    ValuationFunction, build_catalog, build_grid, flat_index)
from .scenario import ScenarioConfig, load_scenario
from .solver import expected_revenue, optimize_allocation_at, solve_mechanism

__version__ = "0.1.0"
