"""User utilities under truthful and misreported types.

Expectations over opponents are deterministic quadrature on the opponents'
grids. Utilities exist only at grid nodes; nothing is interpolated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import MechanismTable, ResourceCatalog, TypeGrid, UserProfile
from .valuation import eval_valuation


def surplus_term(catalog: ResourceCatalog, proportions, premium, discount):
    """Vectorised premium/discount term over the last axis of ``proportions``.

    ``premium`` and ``discount`` must broadcast against ``proportions[..., 0]``.
    """
    p = np.asarray(proportions, dtype=float)
    bundle = np.prod(np.add.reduceat(p, list(catalog.offsets), axis=-1), axis=-1)
    return np.asarray(premium) * bundle - np.asarray(discount) * p.sum(axis=-1)


def premium_discount_term(catalog: ResourceCatalog, profile: UserProfile, p_row, t: float) -> float:
    """Premium for holding a complete bundle minus the discount for every share held.

    The bonus is ``h(t)`` times the product of the per-group shares, so it
    vanishes as soon as a single group is empty.
    """
    p = np.asarray(p_row, dtype=float)
    if p.shape != (catalog.n_resources,):
        raise ValueError(f"p_row must have length {catalog.n_resources}")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("proportions must lie in [0, 1]")
    return float(surplus_term(catalog, p, profile.premium_at(t), profile.discount_at(t)))


def group_utility(catalog: ResourceCatalog, profile: UserProfile, group: int, p_group, cost: float, t: float) -> float:
    """Utility from the resources of one group at a fixed opponent profile.

    ``group`` is 1-based and ``p_group`` holds the user's shares of that
    group's resources only.
    """
    sl = catalog.group_slice(group)
    p = np.asarray(p_group, dtype=float)
    if p.shape != (catalog.group_sizes[group - 1],):
        raise ValueError(f"group {group} has {catalog.group_sizes[group - 1]} resources")
    values = np.array([eval_valuation(v, t) for v in profile.valuations[sl]])
    return float(p @ values - profile.discount_at(t) * p.sum() - cost)


def expect_over_others(values: np.ndarray, grid: TypeGrid, user: int) -> np.ndarray:
    """Contract every user axis except ``user`` with that user's probabilities.

    ``values`` has shape ``grid.shape + trailing``; the result has shape
    ``(R_user,) + trailing``.
    """
    out = np.moveaxis(np.asarray(values, dtype=float), user, 0)
    for other in range(grid.n_users):
        if other != user:
            # axis 1 is always the next remaining opponent
            out = np.tensordot(out, grid.probs[other], axes=([1], [0]))
    return out


def valuation_table(profile: UserProfile, nodes) -> np.ndarray:
    """``v_j(t_k)`` for every node k and resource j, shape (R, M)."""
    nodes = np.asarray(nodes, dtype=float)
    return np.stack([np.atleast_1d(eval_valuation(v, nodes)) for v in profile.valuations], axis=1)


def joint_surplus_term(catalog: ResourceCatalog, profiles: Sequence[UserProfile], mech: MechanismTable, user: int) -> np.ndarray:
    """``S_user`` at every joint node, evaluated with the user's reported node."""
    grid = mech.grid
    nodes = grid.nodes[user]
    shape = [1] * grid.n_users
    shape[user] = len(nodes)
    h = np.asarray(profiles[user].premium_at(nodes), dtype=float).reshape(shape)
    l = np.asarray(profiles[user].discount_at(nodes), dtype=float).reshape(shape)
    return surplus_term(catalog, mech.allocation[..., user, :], h, l)


@dataclass(frozen=True, eq=False)
class InterimView:
    """One user's interim quantities on its own grid.

    ``alloc[m, j]`` is the expected share of resource j when reporting node m,
    ``surplus[m]`` the expected premium/discount term, ``values[k, j]`` the
    true-type valuations and ``costs[m]`` the interim payment.
    """

    user: int
    nodes: np.ndarray
    probs: np.ndarray
    alloc: np.ndarray
    surplus: np.ndarray
    values: np.ndarray
    costs: np.ndarray

    def report_utility(self, true_node: int, fake_node: int) -> float:
        return float(np.dot(self.alloc[fake_node], self.values[true_node]) + self.surplus[fake_node] - self.costs[fake_node])

    def utility_matrix(self) -> np.ndarray:
        """``[k, m]`` = utility of true node k reporting node m."""
        return self.values @ self.alloc.T + (self.surplus - self.costs)[None, :]

    def truthful_utility(self) -> np.ndarray:
        return np.einsum("kj,kj->k", self.alloc, self.values) + self.surplus - self.costs


def interim_view(catalog: ResourceCatalog, profiles: Sequence[UserProfile], mech: MechanismTable, user: int) -> InterimView:
    grid = mech.grid
    alloc = expect_over_others(mech.allocation[..., user, :], grid, user)
    surplus = expect_over_others(joint_surplus_term(catalog, profiles, mech, user), grid, user)
    return InterimView(
        user=user,
        nodes=grid.nodes[user],
        probs=grid.probs[user],
        alloc=alloc,
        surplus=surplus,
        values=valuation_table(profiles[user], grid.nodes[user]),
        costs=np.asarray(mech.costs[user]),
    )


def total_utility(catalog, profiles, mech: MechanismTable, i: int, t_i: float) -> float:
    """Truthful expected utility of user ``i`` at grid node ``t_i``."""
    k = mech.grid.node_index(i, t_i)
    return interim_view(catalog, profiles, mech, i).report_utility(k, k)


def misreport_utility(catalog, profiles, mech: MechanismTable, i: int, true_t: float, fake_t: float) -> float:
    """Expected utility of user ``i`` with type ``true_t`` reporting ``fake_t``.

    Allocation, premium/discount term and cost follow the report; valuations
    follow the true type.
    """
    k = mech.grid.node_index(i, true_t)
    m = mech.grid.node_index(i, fake_t)
    return interim_view(catalog, profiles, mech, i).report_utility(k, m)
