"""Revenue-optimal mechanism on a type grid.

The allocation maximises the virtual surplus separately at every joint type
node. The objective is affine in each resource column (the premium term is a
product of per-group sums of one user's row), so a maximiser sits on an
integral vertex: every resource goes wholly to one user or to nobody. The
vertex set has (N + 1)^M members and is enumerated outright.

Payments follow the envelope condition with the bottom type's utility set to
zero. The envelope integral of ``v'(x) p(x)`` is taken cell by cell as
``(v(t_{k+1}) - v(t_k)) * (p_k + p_{k+1}) / 2``: trapezoid in the allocation,
exact in the valuation. With that rule a monotone allocation is exactly
incentive compatible on the grid.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import HazardUndefinedError, RegularityWarning
from .model import Allocation, MechanismTable, ResourceCatalog, TypeGrid, UserProfile, check_profiles
from .utility import expect_over_others, interim_view, surplus_term, valuation_table
from .valuation import eval_derivative, eval_valuation, hazard, virtual_valuation

TIE_RTOL = 1e-12
MAX_VERTICES = 2_000_000


@dataclass(frozen=True, eq=False)
class VertexSet:
    """All integral allocations, ordered so the first maximum is the preferred one.

    ``owners[v, j]`` is the user holding resource j in vertex v, or -1 when the
    resource stays with the seller. Vertices are in lexicographic order with
    -1 first, so ``argmax`` prefers leaving a resource unassigned and then the
    lower user index.
    """

    owners: np.ndarray
    onehot: np.ndarray
    bundle: np.ndarray
    count: np.ndarray


@lru_cache(maxsize=32)
def vertex_set(catalog: ResourceCatalog, n_users: int) -> VertexSet:
    m = catalog.n_resources
    if (n_users + 1) ** m > MAX_VERTICES:
        raise ValueError(f"{(n_users + 1) ** m} vertices exceed the enumeration limit")
    owners = np.array(list(itertools.product(range(-1, n_users), repeat=m)), dtype=int).reshape(-1, m)
    onehot = (owners[:, None, :] == np.arange(n_users)[None, :, None]).astype(float)
    sums = np.add.reduceat(onehot, list(catalog.offsets), axis=2)
    return VertexSet(owners, onehot, sums.prod(axis=2), onehot.sum(axis=2))


def user_virtual_values(profile: UserProfile, nodes) -> np.ndarray:
    """Virtual valuations at each node, shape (R, M).

    A point-mass user has no private information, so its raw valuation is used.
    """
    nodes = np.atleast_1d(np.asarray(nodes, dtype=float))
    if profile.type_dist.is_point_mass:
        return valuation_table(profile, nodes)
    return np.stack(
        [np.atleast_1d(virtual_valuation(v, profile.type_dist, nodes)) for v in profile.valuations], axis=1
    )


def _factors_at(profiles, joint_t):
    h = np.array([float(p.premium_at(t)) for p, t in zip(profiles, joint_t)])
    l = np.array([float(p.discount_at(t)) for p, t in zip(profiles, joint_t)])
    return h, l


def _objective(catalog, vv, h, l, proportions) -> float:
    p = np.asarray(proportions, dtype=float)
    return float(np.sum(vv * p) + np.sum(surplus_term(catalog, p, h, l)))


def virtual_surplus_at(catalog: ResourceCatalog, profiles: Sequence[UserProfile], joint_t, alloc) -> float:
    """Seller's virtual surplus of ``alloc`` when users have types ``joint_t``."""
    check_profiles(catalog, profiles)
    p = alloc.proportions if isinstance(alloc, Allocation) else np.asarray(alloc, dtype=float)
    vv = np.vstack([user_virtual_values(prof, [t]) for prof, t in zip(profiles, joint_t)])
    h, l = _factors_at(profiles, joint_t)
    return _objective(catalog, vv, h, l, p)


def _split_ties(catalog, vv, h, l, proportions, tol) -> np.ndarray:
    """Share each contested resource equally among its tied claimants.

    Columns are revisited one at a time with the others held fixed. Along a
    single column the objective is affine, so the equal split of tied
    options keeps the optimal value.
    """
    p = proportions.copy()
    n_users, n_res = p.shape
    for j in range(n_res):
        scores = []
        for owner in range(-1, n_users):
            q = p.copy()
            q[:, j] = 0.0
            if owner >= 0:
                q[owner, j] = 1.0
            scores.append(_objective(catalog, vv, h, l, q))
        scores = np.array(scores)
        tied = np.flatnonzero(scores >= scores.max() - tol)
        if len(tied) > 1:
            p[:, j] = 0.0
            for option in tied:
                if option > 0:
                    p[option - 1, j] += 1.0 / len(tied)
    return p


def _tie_tol(best):
    return TIE_RTOL * np.maximum(1.0, np.abs(best))


def optimize_allocation_at(catalog: ResourceCatalog, profiles: Sequence[UserProfile], joint_t) -> Allocation:
    """Allocation maximising the virtual surplus at one joint type."""
    check_profiles(catalog, profiles)
    vv = np.vstack([user_virtual_values(prof, [t]) for prof, t in zip(profiles, joint_t)])
    h, l = _factors_at(profiles, joint_t)
    verts = vertex_set(catalog, len(profiles))
    scores = np.einsum("nm,vnm->v", vv, verts.onehot) + verts.bundle @ h - verts.count @ l
    best = int(np.argmax(scores))
    p = verts.onehot[best].copy()
    tol = float(_tie_tol(scores[best]))
    if np.count_nonzero(scores >= scores[best] - tol) > 1:
        p = _split_ties(catalog, vv, h, l, p, tol)
    return Allocation(p)


def allocate_on_nodes(catalog: ResourceCatalog, profiles: Sequence[UserProfile], node_lists) -> np.ndarray:
    """Optimal allocation on the product of per-user node lists.

    Returns an array of shape ``(len(node_lists[0]), ..., N, M)``.
    """
    n = len(profiles)
    verts = vertex_set(catalog, n)
    node_lists = [np.atleast_1d(np.asarray(nl, dtype=float)) for nl in node_lists]
    shape = tuple(len(nl) for nl in node_lists)
    vvs, hs, ls = [], [], []
    total = np.zeros(shape + (len(verts.owners),))
    for i, (prof, nodes) in enumerate(zip(profiles, node_lists)):
        vv = user_virtual_values(prof, nodes)
        h = np.atleast_1d(prof.premium_at(nodes)).astype(float)
        l = np.atleast_1d(prof.discount_at(nodes)).astype(float)
        score = vv @ verts.onehot[:, i, :].T + np.outer(h, verts.bundle[:, i]) - np.outer(l, verts.count[:, i])
        bshape = [1] * n + [score.shape[1]]
        bshape[i] = len(nodes)
        total += score.reshape(bshape)
        vvs.append(vv)
        hs.append(h)
        ls.append(l)
    best_idx = np.argmax(total, axis=-1)
    best = np.take_along_axis(total, best_idx[..., None], axis=-1)[..., 0]
    tol = _tie_tol(best)
    n_tied = np.count_nonzero(total >= (best - tol)[..., None], axis=-1)
    alloc = verts.onehot[best_idx]
    for idx in zip(*np.nonzero(n_tied > 1)):
        vv = np.vstack([vvs[i][k] for i, k in enumerate(idx)])
        h = np.array([hs[i][k] for i, k in enumerate(idx)])
        l = np.array([ls[i][k] for i, k in enumerate(idx)])
        alloc[idx] = _split_ties(catalog, vv, h, l, alloc[idx], float(tol[idx]))
    return alloc


def _envelope_increments(values: np.ndarray, interim_alloc: np.ndarray) -> np.ndarray:
    """Per-cell envelope integral, exact in v and trapezoid in the allocation."""
    return np.sum(np.diff(values, axis=0) * (interim_alloc[:-1] + interim_alloc[1:]) / 2, axis=1)


def solve_mechanism(catalog: ResourceCatalog, profiles: Sequence[UserProfile], grid: TypeGrid) -> MechanismTable:
    """Optimal allocation at every joint node and envelope costs for every user."""
    check_profiles(catalog, profiles)
    if grid.n_users != len(profiles):
        raise ValueError("grid and profiles disagree on the number of users")
    for i, (prof, nodes) in enumerate(zip(profiles, grid.nodes)):
        if not prof.type_dist.is_point_mass and len(nodes) < 2:
            raise ValueError(f"user {i} needs at least two grid nodes")
    alloc = allocate_on_nodes(catalog, profiles, grid.nodes)
    draft = MechanismTable(grid, alloc, tuple(np.zeros(r) for r in grid.shape))
    costs, notes = [], []
    for i in range(len(profiles)):
        view = interim_view(catalog, profiles, draft, i)
        value = np.einsum("kj,kj->k", view.alloc, view.values) + view.surplus
        inc = _envelope_increments(view.values, view.alloc)
        rent = np.concatenate([[0.0], np.cumsum(inc)])
        costs.append(value - rent)
        scale = max(1.0, float(np.max(np.abs(value))))
        if np.any(inc < -1e-12 * scale):
            msg = f"user {i}: envelope utility decreases in own type (allocation not monotone in value)"
            warnings.warn(msg, RegularityWarning, stacklevel=2)
            notes.append(msg)
    return MechanismTable(grid, alloc, tuple(costs), tuple(notes))


def expected_revenue(catalog: ResourceCatalog, profiles: Sequence[UserProfile], mech: MechanismTable) -> float:
    """Sum over users of the expected interim payment."""
    return float(sum(np.dot(p, c) for p, c in zip(mech.grid.probs, mech.costs)))


def optimal_user_utility(catalog, profiles, mech: MechanismTable, i: int, t_i: float) -> float:
    """Hazard-form utility ``(1 - F) / f * sum_j v'_j p_j`` at an own-type node.

    This is a diagnostic. It agrees with :func:`~cloudauction.utility.total_utility`
    only in expectation over the user's own type, not node by node.
    """
    dist = profiles[i].type_dist
    if dist.is_point_mass:
        raise HazardUndefinedError("point-mass users have no hazard term")
    k = mech.grid.node_index(i, t_i)
    view = interim_view(catalog, profiles, mech, i)
    factor = float(hazard(dist, t_i))
    if factor == 0.0:
        return 0.0
    deriv = np.array([eval_derivative(v, t_i) for v in profiles[i].valuations])
    return float(factor * np.dot(deriv, view.alloc[k]))


def interim_cost_at(catalog, profiles, mech: MechanismTable, i: int, t: float) -> float:
    """Interim cost of user ``i`` at an arbitrary type inside its domain.

    The allocation at ``t`` is recomputed against the opponents' grids, so
    ``mech`` must have been solved for ``profiles``. The envelope integral is
    extended from the nearest node below ``t`` by one partial cell. At a node
    this returns the tabulated cost.
    """
    grid = mech.grid
    nodes = grid.nodes[i]
    if not nodes[0] - 1e-12 <= t <= nodes[-1] + 1e-12:
        raise ValueError(f"type {t} outside user {i}'s domain")
    k = max(0, int(np.searchsorted(nodes, t, side="right")) - 1)
    view = interim_view(catalog, profiles, mech, i)
    node_lists = list(grid.nodes)
    node_lists[i] = np.array([t])
    local = allocate_on_nodes(catalog, profiles, node_lists)
    p_t = expect_over_others(local[..., i, :], _sub_grid(grid, i, t), i)[0]
    h = profiles[i].premium_at(t)
    l = profiles[i].discount_at(t)
    s_t = expect_over_others(surplus_term(catalog, local[..., i, :], h, l), _sub_grid(grid, i, t), i)[0]
    v_t = np.array([float(eval_valuation(v, t)) for v in profiles[i].valuations])
    u_k = view.report_utility(k, k)
    u_t = u_k + float(np.sum((v_t - view.values[k]) * (view.alloc[k] + p_t) / 2))
    return float(np.dot(p_t, v_t) + s_t - u_t)


def _sub_grid(grid: TypeGrid, user: int, t: float) -> TypeGrid:
    nodes = list(grid.nodes)
    weights = list(grid.weights)
    probs = list(grid.probs)
    nodes[user] = np.array([t])
    weights[user] = np.ones(1)
    probs[user] = np.ones(1)
    return TypeGrid(tuple(nodes), tuple(weights), tuple(probs), grid.resolution)
