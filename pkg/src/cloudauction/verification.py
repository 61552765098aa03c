"""Grid-exhaustive certificates for rationality, truthfulness and the envelope identities.

Every check returns a report object and never raises on a failing mechanism,
so callers can tabulate results. IR and IC use an absolute tolerance; the
integral identities use tolerances scaled by the grid resolution.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, SearchSpaceError
from .model import Allocation, MechanismTable, ResourceCatalog, UserProfile, check_profiles
from .utility import InterimView, interim_view, surplus_term
from .valuation import eval_derivative, eval_valuation, hazard, virtual_valuation

DEFAULT_TOL = 1e-6
ENVELOPE_CONSTANT = 10.0
ORACLE_BUDGET = 100_000_000


class _Report:
    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class IRReport(_Report):
    passed: bool
    worst_user: int
    worst_type: float
    worst_value: float
    tolerance: float

    def summary(self) -> str:
        return (f"IR {'PASS' if self.passed else 'FAIL'}  min utility {self.worst_value:.3e} "
                f"(user {self.worst_user + 1}, t={self.worst_type:.6g})")


@dataclass(frozen=True)
class ICReport(_Report):
    passed: bool
    worst_user: int
    worst_pair: tuple
    gain: float
    tolerance: float

    def summary(self) -> str:
        t, fake = self.worst_pair
        return (f"IC {'PASS' if self.passed else 'FAIL'}  max misreport gain {self.gain:.3e} "
                f"(user {self.worst_user + 1}, true {t:.6g} -> report {fake:.6g})")


@dataclass(frozen=True)
class EnvelopeReport(_Report):
    passed: bool
    max_residual: float
    tolerance: float
    residuals: tuple

    def summary(self) -> str:
        return (f"envelope {'PASS' if self.passed else 'FAIL'}  max residual {self.max_residual:.3e} "
                f"(tolerance {self.tolerance:.3e})")


@dataclass(frozen=True)
class MonotonicityReport(_Report):
    passed: bool
    worst_user: int
    worst_pair: tuple
    slack: float
    tolerance: float

    def summary(self) -> str:
        t, fake = self.worst_pair
        return (f"monotonicity {'PASS' if self.passed else 'FAIL'}  min slack {self.slack:.3e} "
                f"(user {self.worst_user + 1}, t={t:.6g}, report {fake:.6g})")


@dataclass(frozen=True)
class RevenueDecompositionReport(_Report):
    passed: bool
    revenue: float
    virtual_surplus: float
    base_utility: float
    residual: float
    hazard_gap: float
    tolerance: float

    def summary(self) -> str:
        return (f"revenue decomposition {'PASS' if self.passed else 'FAIL'}  revenue {self.revenue:.6f} "
                f"vs virtual surplus {self.virtual_surplus - self.base_utility:.6f} "
                f"(relative residual {self.residual:.2e}; continuous-hazard gap {self.hazard_gap:.2e})")


def _views(catalog, profiles, mech) -> list:
    check_profiles(catalog, profiles)
    return [interim_view(catalog, profiles, mech, i) for i in range(mech.n_users)]


def check_ir(catalog, profiles, mech: MechanismTable, tol: float = DEFAULT_TOL) -> IRReport:
    """Truthful utility is at least ``-tol`` for every user and node."""
    worst = (np.inf, 0, 0)
    for view in _views(catalog, profiles, mech):
        u = view.truthful_utility()
        k = int(np.argmin(u))
        if u[k] < worst[0]:
            worst = (float(u[k]), view.user, k)
    value, user, k = worst
    return IRReport(value >= -tol, user, float(mech.grid.nodes[user][k]), value, tol)


def check_ic(catalog, profiles, mech: MechanismTable, tol: float = DEFAULT_TOL) -> ICReport:
    """No report on the grid beats the truth by more than ``tol``."""
    worst = (-np.inf, 0, (0, 0))
    for view in _views(catalog, profiles, mech):
        mat = view.utility_matrix()
        gain = mat - np.diag(mat)[:, None]
        k, m = np.unravel_index(int(np.argmax(gain)), gain.shape)
        if gain[k, m] > worst[0]:
            worst = (float(gain[k, m]), view.user, (int(k), int(m)))
    gain, user, (k, m) = worst
    nodes = mech.grid.nodes[user]
    return ICReport(gain <= tol, user, (float(nodes[k]), float(nodes[m])), max(gain, 0.0), tol)


def _marginal_value(profile: UserProfile, view: InterimView) -> np.ndarray:
    """``sum_j v'_j(t_k) p_j(t_k)``, skipping derivatives where nothing is held."""
    out = np.zeros(len(view.nodes))
    for j, v in enumerate(profile.valuations):
        held = view.alloc[:, j] != 0
        if np.any(held):
            out[held] += np.atleast_1d(eval_derivative(v, view.nodes[held])) * view.alloc[held, j]
    return out


def check_envelope(catalog, profiles, mech: MechanismTable, constant: float = ENVELOPE_CONSTANT) -> EnvelopeReport:
    """Compare utility gains with a trapezoid quadrature of ``E[sum_j v'_j p_j]``.

    The residual measures the gap between the tabulated utilities and the
    integral form of the envelope condition. Point-mass users are skipped.
    Tolerance is ``constant / R^2`` with R the user's node count.
    """
    residuals, passed, tols = [], True, []
    for view, prof in zip(_views(catalog, profiles, mech), profiles):
        if prof.type_dist.is_point_mass:
            residuals.append(0.0)
            continue
        u = view.truthful_utility()
        g = _marginal_value(prof, view)
        cum = np.concatenate([[0.0], np.cumsum(np.diff(view.nodes) * (g[:-1] + g[1:]) / 2)])
        res = float(np.max(np.abs(u - u[0] - cum)))
        tol = constant / len(view.nodes) ** 2
        residuals.append(res)
        tols.append(tol)
        passed &= res <= tol
    tol = min(tols) if tols else constant
    return EnvelopeReport(bool(passed), float(max(residuals)), tol, tuple(residuals))


def _stieltjes_cumulative(view: InterimView) -> np.ndarray:
    inc = np.sum(np.diff(view.values, axis=0) * (view.alloc[:-1] + view.alloc[1:]) / 2, axis=1)
    return np.concatenate([[0.0], np.cumsum(inc)])


def check_monotonicity(catalog, profiles, mech: MechanismTable, tol: float = DEFAULT_TOL) -> MonotonicityReport:
    """Integrated marginal value between any two reports dominates the value gap.

    For every pair (t, t_hat) the left side is the quadrature of
    ``sum_j v'_j p_j`` from t_hat to t, taken as the integral of p against dv;
    the right side is ``sum_j (v_j(t) - v_j(t_hat)) p_j(t_hat)``.
    """
    worst = (np.inf, 0, (0, 0))
    for view, prof in zip(_views(catalog, profiles, mech), profiles):
        if prof.type_dist.is_point_mass:
            continue
        w = _stieltjes_cumulative(view)
        lhs = w[:, None] - w[None, :]
        cross = view.values @ view.alloc.T
        rhs = cross - np.diag(cross)[None, :]
        slack = lhs - rhs
        k, m = np.unravel_index(int(np.argmin(slack)), slack.shape)
        if slack[k, m] < worst[0]:
            worst = (float(slack[k, m]), view.user, (int(k), int(m)))
    slack, user, (k, m) = worst
    if not np.isfinite(slack):
        return MonotonicityReport(True, 0, (0.0, 0.0), 0.0, tol)
    nodes = mech.grid.nodes[user]
    return MonotonicityReport(slack >= -tol, user, (float(nodes[k]), float(nodes[m])), min(slack, 0.0), tol)


def _grid_rent(view: InterimView) -> float:
    """Expected information rent on the grid by summation by parts.

    Each cell's envelope increment is paid by every type above the cell, so
    node k carries ``(dv_k T_k + dv_{k-1} T_{k-1}) / 2`` per unit of its
    allocation, where ``T_k`` is the probability of types above node k.
    """
    if len(view.nodes) == 1:
        return 0.0
    tail = 1.0 - np.cumsum(view.probs)
    dv = np.diff(view.values, axis=0)
    weight = np.zeros_like(view.values)
    weight[:-1] += dv * tail[:-1, None] / 2
    weight[1:] += dv * tail[:-1, None] / 2
    return float(np.sum(weight * view.alloc))


def _hazard_rent(prof: UserProfile, view: InterimView) -> float:
    """Continuous-form rent ``E[(1 - F) / f * sum_j v'_j p_j]`` by the grid's weights."""
    if prof.type_dist.is_point_mass:
        return 0.0
    live = view.probs > 0
    g = _marginal_value(prof, view)
    factor = np.zeros(len(view.nodes))
    factor[live] = np.atleast_1d(hazard(prof.type_dist, view.nodes[live]))
    return float(np.dot(view.probs, factor * g))


def check_revenue_decomposition(catalog, profiles, mech: MechanismTable, tol: float = DEFAULT_TOL) -> RevenueDecompositionReport:
    """Direct payment accounting against expected virtual surplus minus base utilities.

    The left side sums expected interim payments. The right side is expected
    (value + premium/discount term) minus the expected information rent,
    minus every user's utility at the bottom of its support. Both are
    computed from the table along separate paths. ``hazard_gap`` reports
    how far the continuous hazard-rate rent sits from the grid rent.
    """
    revenue = 0.0
    gross = 0.0
    base = 0.0
    rent = 0.0
    hazard_rent = 0.0
    for view, prof in zip(_views(catalog, profiles, mech), profiles):
        revenue += float(np.dot(view.probs, view.costs))
        value = np.einsum("kj,kj->k", view.alloc, view.values) + view.surplus
        gross += float(np.dot(view.probs, value))
        base += view.report_utility(0, 0)
        rent += _grid_rent(view)
        hazard_rent += _hazard_rent(prof, view)
    virtual = gross - rent
    residual = abs(revenue - (virtual - base)) / (1.0 + abs(revenue))
    gap = abs(hazard_rent - rent) / (1.0 + abs(revenue))
    return RevenueDecompositionReport(residual <= tol, revenue, virtual, base, residual, gap, tol)


def full_extraction_mechanism(catalog, profiles, mech: MechanismTable) -> MechanismTable:
    """Same allocation as ``mech`` but every user pays its whole interim value.

    Every truthful type is left with zero utility, so whenever the allocation
    grows with the report a low report earns a positive rent. Used as a
    known IC violator.
    """
    costs = []
    for view in _views(catalog, profiles, mech):
        costs.append(np.einsum("kj,kj->k", view.alloc, view.values) + view.surplus)
    return MechanismTable(mech.grid, mech.allocation, tuple(costs), ("full-surplus extraction",))


# ---------------------------------------------------------------------------
# Brute-force allocation oracle
# ---------------------------------------------------------------------------

def _best_per_key(keys: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Index of the largest value for every distinct key row."""
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = np.ravel(inv)
    order = np.lexsort((-vals, inv))
    first = np.ones(len(order), dtype=bool)
    first[1:] = inv[order][1:] != inv[order][:-1]
    return order[first]


def _oracle_inputs(catalog, profiles, joint_t):
    vv = np.zeros((len(profiles), catalog.n_resources))
    for i, (prof, t) in enumerate(zip(profiles, joint_t)):
        for j, v in enumerate(prof.valuations):
            if prof.type_dist.is_point_mass:
                vv[i, j] = eval_valuation(v, t)
            else:
                vv[i, j] = virtual_valuation(v, prof.type_dist, t)
    h = np.array([float(p.premium_at(t)) for p, t in zip(profiles, joint_t)])
    l = np.array([float(p.discount_at(t)) for p, t in zip(profiles, joint_t)])
    return vv, h, l


def _oracle_work(catalog, n_options: int, n_users: int, steps: int) -> float:
    work, states = 0.0, 1.0
    for size in catalog.group_sizes:
        table = 1.0
        for r in range(1, size + 1):
            work += table * n_options
            table = min(table * n_options, float((r * steps + 1) ** n_users))
        work += states * table
        states *= table
    return work


def oracle_allocation_search(catalog: ResourceCatalog, profiles: Sequence[UserProfile], joint_t,
                             steps: int = 10, budget: float = ORACLE_BUDGET) -> Allocation:
    """Best allocation on the fractional grid ``{0, 1/steps, ..., 1}^(N x M)``.

    The search is exhaustive over every feasible grid allocation. It never
    uses the vertex argument: partial allocations with equal per-user group
    totals are compared directly and only the best survives, which is exact
    because the objective depends on a group only through its linear part
    and its per-user totals.
    """
    check_profiles(catalog, profiles)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    n = len(profiles)
    vv, h, l = _oracle_inputs(catalog, profiles, joint_t)
    options = np.array([a for a in itertools.product(range(steps + 1), repeat=n) if sum(a) <= steps], dtype=np.int64)
    work = _oracle_work(catalog, len(options), n, steps)
    if work > budget:
        raise SearchSpaceError(f"oracle search needs ~{work:.3g} evaluations, budget is {budget:.3g}")

    group_tables = []
    for g in range(1, catalog.n_groups + 1):
        sl = catalog.group_slice(g)
        keys = np.zeros((1, n), dtype=np.int64)
        vals = np.zeros(1)
        trail = []
        for j in range(sl.start, sl.stop):
            lin = options @ (vv[:, j] - l) / steps
            cand_keys = (keys[:, None, :] + options[None, :, :]).reshape(-1, n)
            cand_vals = (vals[:, None] + lin[None, :]).ravel()
            keep = _best_per_key(cand_keys, cand_vals)
            trail.append((keep // len(options), keep % len(options)))
            keys, vals = cand_keys[keep], cand_vals[keep]
        group_tables.append((keys, vals, trail))

    states = np.ones((1, n), dtype=np.int64)
    vals = np.zeros(1)
    picks = []
    for keys, gvals, _ in group_tables:
        cand_states = (states[:, None, :] * keys[None, :, :]).reshape(-1, n)
        cand_vals = (vals[:, None] + gvals[None, :]).ravel()
        keep = _best_per_key(cand_states, cand_vals)
        picks.append((keep // len(keys), keep % len(keys)))
        states, vals = cand_states[keep], cand_vals[keep]

    total = vals + states @ h / float(steps) ** catalog.n_groups
    best = int(np.argmax(total))

    grid_alloc = np.zeros((n, catalog.n_resources), dtype=np.int64)
    idx = best
    for g in range(catalog.n_groups - 1, -1, -1):
        parent, entry = picks[g]
        row_in_group = entry[idx]
        idx = parent[idx]
        _, _, trail = group_tables[g]
        sl = catalog.group_slice(g + 1)
        for col in range(sl.stop - 1, sl.start - 1, -1):
            parent_c, opt_c = trail[col - sl.start]
            grid_alloc[:, col] = options[opt_c[row_in_group]]
            row_in_group = parent_c[row_in_group]
    return Allocation(grid_alloc / steps)


def verify_all(catalog, profiles, mech: MechanismTable, tol: float = DEFAULT_TOL,
               envelope_constant: float = ENVELOPE_CONSTANT) -> dict:
    """Run every check that applies and return the reports keyed by name."""
    reports = {
        "ir": check_ir(catalog, profiles, mech, tol),
        "ic": check_ic(catalog, profiles, mech, tol),
        "envelope": check_envelope(catalog, profiles, mech, envelope_constant),
        "monotonicity": check_monotonicity(catalog, profiles, mech, tol),
    }
    try:
        reports["revenue_decomposition"] = check_revenue_decomposition(catalog, profiles, mech, tol)
    except DomainError:  # pragma: no cover - only custom valuations without derivatives
        pass
    return reports
