"""Domain types: resource catalogs, type laws, valuations, users and mechanisms.

Every type here is immutable once built. Arrays held by these objects are
flagged read-only so tables can be shared between workers without copies.

Indexing conventions
--------------------
Groups, ranks within a group and flat resource indices are numbered from 1,
matching the catalog's prefix-sum map ``j = M_1 + ... + M_{k-1} + r``.
Users are positional and numbered from 0, like the rows of an allocation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import (
    CatalogError,
    HazardUndefinedError,
    IndexOutOfRange,
    InfeasibleAllocation,
    OffGridError,
)

Factor = Union[float, Callable[[float], float]]

SUPPLY_TOL = 1e-9


def _readonly(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# Resource catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResourceCatalog:
    """Partition of M resources into G groups of substitutable resources.

    Resources in one group are substitutes; resources in different groups
    complement each other. A partition cannot express a resource that is a
    substitute of two mutually complementary resources, so the transitivity
    assumption on the relations holds by construction.
    """

    group_sizes: tuple

    @property
    def n_groups(self) -> int:
        return len(self.group_sizes)

    @property
    def n_resources(self) -> int:
        return sum(self.group_sizes)

    @property
    def offsets(self) -> tuple:
        """0-based start of each group in the flat resource axis."""
        starts = [0]
        for size in self.group_sizes[:-1]:
            starts.append(starts[-1] + size)
        return tuple(starts)

    def group_slice(self, group: int) -> slice:
        """0-based slice of the flat axis covered by 1-based ``group``."""
        self._check_group(group)
        start = self.offsets[group - 1]
        return slice(start, start + self.group_sizes[group - 1])

    def flat_index(self, group: int, rank: int) -> int:
        return flat_index(self, group, rank)

    def locate(self, j: int) -> tuple:
        """Inverse of :func:`flat_index`: 1-based ``j`` -> ``(group, rank)``."""
        if isinstance(j, bool) or not isinstance(j, (int, np.integer)) or not 1 <= j <= self.n_resources:
            raise IndexOutOfRange(f"resource index {j!r} outside 1..{self.n_resources}")
        for g, start in enumerate(self.offsets, start=1):
            if j <= start + self.group_sizes[g - 1]:
                return g, int(j - start)
        raise AssertionError("unreachable")  # pragma: no cover

    def group_of(self) -> np.ndarray:
        """0-based group id of every flat resource."""
        return np.repeat(np.arange(self.n_groups), self.group_sizes)

    def _check_group(self, group: int) -> None:
        if isinstance(group, bool) or not isinstance(group, (int, np.integer)) or not 1 <= group <= self.n_groups:
            raise IndexOutOfRange(f"group {group!r} outside 1..{self.n_groups}")


def build_catalog(group_sizes: Sequence[int]) -> ResourceCatalog:
    """Validate group sizes and build the catalog."""
    sizes = list(group_sizes)
    if not sizes:
        raise CatalogError("a catalog needs at least one group")
    for k, size in enumerate(sizes, start=1):
        if isinstance(size, bool) or not isinstance(size, (int, np.integer)) or size < 1:
            raise CatalogError(f"group {k} has invalid size {size!r}; sizes must be integers >= 1")
    return ResourceCatalog(tuple(int(s) for s in sizes))


def flat_index(catalog: ResourceCatalog, group: int, rank: int) -> int:
    """Flat 1-based index of the ``rank``-th resource of ``group``."""
    catalog._check_group(group)
    size = catalog.group_sizes[group - 1]
    if isinstance(rank, bool) or not isinstance(rank, (int, np.integer)) or not 1 <= rank <= size:
        raise IndexOutOfRange(f"rank {rank!r} outside 1..{size} for group {group}")
    return catalog.offsets[group - 1] + int(rank)


# ---------------------------------------------------------------------------
# Type distributions
# ---------------------------------------------------------------------------

DIST_KINDS = ("uniform", "power", "point", "custom")


@dataclass(frozen=True)
class TypeDistribution:
    """Law of one user's private type on ``[low, high]``.

    ``uniform`` and ``power`` are truncated to their bounds and renormalised,
    so ``power`` with exponent n has ``F(t) = (t^n - low^n) / (high^n - low^n)``.
    Truncating from below leaves the hazard ``(1 - F) / f`` unchanged.
    """

    kind: str
    low: float
    high: float
    exponent: float | None = None
    cdf_fn: Callable | None = field(default=None, compare=False)
    pdf_fn: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in DIST_KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise ValueError("distribution bounds must be finite")
        if self.kind == "point":
            if self.low != self.high:
                raise ValueError("a point mass has low == high")
            return
        if not self.low < self.high:
            raise ValueError(f"need low < high, got [{self.low}, {self.high}]")
        if self.kind == "power":
            if self.exponent is None or not self.exponent > 0:
                raise ValueError("power distribution needs a positive exponent")
            if self.low < 0:
                raise ValueError("power distribution needs low >= 0")
        if self.kind == "custom":
            if self.cdf_fn is None or self.pdf_fn is None:
                raise ValueError("custom distribution needs both cdf and pdf")
            if abs(float(self.cdf_fn(self.low))) > 1e-9 or abs(float(self.cdf_fn(self.high)) - 1.0) > 1e-9:
                raise ValueError("custom cdf must be 0 at low and 1 at high")

    @classmethod
    def uniform(cls, low: float = 0.0, high: float = 1.0) -> "TypeDistribution":
        return cls("uniform", float(low), float(high))

    @classmethod
    def power_cdf(cls, exponent: float, low: float = 0.0, high: float = 1.0) -> "TypeDistribution":
        return cls("power", float(low), float(high), exponent=float(exponent))

    @classmethod
    def point_mass(cls, value: float) -> "TypeDistribution":
        return cls("point", float(value), float(value))

    @classmethod
    def custom(cls, cdf: Callable, pdf: Callable, low: float, high: float) -> "TypeDistribution":
        return cls("custom", float(low), float(high), cdf_fn=cdf, pdf_fn=pdf)

    @property
    def is_point_mass(self) -> bool:
        return self.kind == "point"

    @property
    def value(self) -> float:
        """Location of a point mass."""
        return self.low

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "point":
            out = (t >= self.low).astype(float)
        elif self.kind == "uniform":
            out = np.clip((t - self.low) / (self.high - self.low), 0.0, 1.0)
        elif self.kind == "power":
            n = self.exponent
            tc = np.clip(t, self.low, self.high)
            out = (tc ** n - self.low ** n) / (self.high ** n - self.low ** n)
        else:
            tc = np.clip(t, self.low, self.high)
            out = np.asarray(self.cdf_fn(tc), dtype=float) * np.ones_like(tc)
        return out[()] if out.ndim == 0 else out

    def pdf(self, t):
        if self.kind == "point":
            raise HazardUndefinedError("a point mass has no density")
        t = np.asarray(t, dtype=float)
        inside = (t >= self.low) & (t <= self.high)
        if self.kind == "uniform":
            out = np.full(t.shape, 1.0 / (self.high - self.low))
        elif self.kind == "power":
            n = self.exponent
            tc = np.clip(t, self.low, self.high)
            out = n * tc ** (n - 1) / (self.high ** n - self.low ** n)
        else:
            tc = np.clip(t, self.low, self.high)
            out = np.asarray(self.pdf_fn(tc), dtype=float) * np.ones_like(tc)
        out = np.where(inside, out, 0.0)
        return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Valuations and users
# ---------------------------------------------------------------------------

VALUATION_FAMILIES = ("linear", "log_inverse", "sqrt_linear", "sqrt_log", "linear_log", "custom")


@dataclass(frozen=True)
class ValuationFunction:
    """One user's value for one resource as a function of the user's type.

    Families and their single parameter:

    ``linear``       gamma * t
    ``log_inverse``  log(1 + theta / t)
    ``sqrt_linear``  gamma * sqrt(t)
    ``sqrt_log``     sqrt(t) * log(1 + theta / sqrt(t))
    ``linear_log``   t * log(1 + theta / t)
    ``custom``       user supplied ``fn`` and its derivative ``dfn``

    Evaluation lives in :mod:`cloudauction.valuation`.
    """

    family: str
    param: float = 0.0
    fn: Callable | None = field(default=None, compare=False)
    dfn: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in VALUATION_FAMILIES:
            raise ValueError(f"unknown valuation family {self.family!r}")
        if self.family == "custom":
            if self.fn is None or self.dfn is None:
                raise ValueError("custom valuation needs fn and dfn")
        elif not (math.isfinite(self.param) and self.param > 0):
            raise ValueError(f"{self.family} parameter must be a positive real, got {self.param!r}")

    @classmethod
    def linear(cls, gamma: float) -> "ValuationFunction":
        return cls("linear", float(gamma))

    @classmethod
    def log_inverse(cls, theta: float) -> "ValuationFunction":
        return cls("log_inverse", float(theta))

    @classmethod
    def sqrt_linear(cls, gamma: float) -> "ValuationFunction":
        return cls("sqrt_linear", float(gamma))

    @classmethod
    def sqrt_log(cls, theta: float) -> "ValuationFunction":
        return cls("sqrt_log", float(theta))

    @classmethod
    def linear_log(cls, theta: float) -> "ValuationFunction":
        return cls("linear_log", float(theta))

    @classmethod
    def custom(cls, fn: Callable, dfn: Callable) -> "ValuationFunction":
        return cls("custom", fn=fn, dfn=dfn)


def eval_factor(factor: Factor, t):
    """Evaluate a premium/discount factor that is a constant or a function of type."""
    if callable(factor):
        out = np.asarray(np.vectorize(factor, otypes=[float])(np.asarray(t, dtype=float)), dtype=float)
    else:
        out = np.full(np.shape(t), float(factor))
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class UserProfile:
    """A user's type law, per-resource valuations and premium/discount factors."""

    type_dist: TypeDistribution
    valuations: tuple
    premium: Factor = 0.0
    discount: Factor = 0.0

    def __post_init__(self):
        object.__setattr__(self, "valuations", tuple(self.valuations))
        probe = np.unique([self.type_dist.low, 0.5 * (self.type_dist.low + self.type_dist.high), self.type_dist.high])
        for name, factor in (("premium", self.premium), ("discount", self.discount)):
            vals = np.atleast_1d(eval_factor(factor, probe))
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"{name} factor is not finite on the type domain")
            if np.any(vals < 0):
                raise ValueError(f"{name} factor must be >= 0")

    @property
    def n_resources(self) -> int:
        return len(self.valuations)

    def premium_at(self, t):
        return eval_factor(self.premium, t)

    def discount_at(self, t):
        return eval_factor(self.discount, t)


def check_profiles(catalog: ResourceCatalog, profiles: Sequence[UserProfile]) -> None:
    """Raise if any profile does not carry exactly one valuation per resource."""
    if not profiles:
        raise ValueError("at least one user is required")
    for i, prof in enumerate(profiles):
        if prof.n_resources != catalog.n_resources:
            raise ValueError(
                f"user {i} has {prof.n_resources} valuations, catalog has {catalog.n_resources} resources"
            )


# ---------------------------------------------------------------------------
# Allocations
# ---------------------------------------------------------------------------

def is_feasible(proportions, tol: float = SUPPLY_TOL) -> bool:
    """Box constraints ``0 <= p <= 1`` and per-resource supply ``sum_i p_ij <= 1``."""
    p = np.asarray(proportions, dtype=float)
    if p.ndim < 2 or not np.all(np.isfinite(p)):
        return False
    if np.any(p < -tol) or np.any(p > 1 + tol):
        return False
    return bool(np.all(p.sum(axis=-2) <= 1 + tol))


@dataclass(frozen=True, eq=False)
class Allocation:
    """N x M matrix of resource proportions ``p[i, j]``."""

    proportions: np.ndarray

    def __post_init__(self):
        p = _readonly(self.proportions)
        if p.ndim != 2:
            raise InfeasibleAllocation(f"allocation must be a 2-D matrix, got shape {p.shape}")
        if not is_feasible(p):
            raise InfeasibleAllocation("allocation violates 0 <= p <= 1 or per-resource supply")
        object.__setattr__(self, "proportions", p)

    @classmethod
    def empty(cls, n_users: int, n_resources: int) -> "Allocation":
        return cls(np.zeros((n_users, n_resources)))

    @property
    def shape(self) -> tuple:
        return self.proportions.shape

    def group_sums(self, catalog: ResourceCatalog) -> np.ndarray:
        """Aggregate share of each group per user, shape (N, G)."""
        return np.add.reduceat(self.proportions, list(catalog.offsets), axis=1)

    def __eq__(self, other):
        if not isinstance(other, Allocation):
            return NotImplemented
        return np.array_equal(self.proportions, other.proportions)

    def __repr__(self):
        return f"Allocation({self.proportions.tolist()!r})"


# ---------------------------------------------------------------------------
# Type grids and mechanism tables
# ---------------------------------------------------------------------------

def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    """Composite trapezoid weights for arbitrary increasing nodes."""
    nodes = np.asarray(nodes, dtype=float)
    if nodes.size == 1:
        return np.ones(1)
    gaps = np.diff(nodes)
    w = np.zeros_like(nodes)
    w[:-1] += gaps / 2
    w[1:] += gaps / 2
    return w


@dataclass(frozen=True, eq=False)
class TypeGrid:
    """Per-user quadrature nodes over each type domain.

    ``weights`` are trapezoid weights for ``dx`` (they sum to ``high - low``);
    ``probs`` are the expectation weights ``w_k f(t_k)`` renormalised to sum
    to one. A point-mass user has a single node with weight and probability 1.
    """

    nodes: tuple
    weights: tuple
    probs: tuple
    resolution: int

    def __post_init__(self):
        for name in ("nodes", "weights", "probs"):
            object.__setattr__(self, name, tuple(_readonly(a) for a in getattr(self, name)))

    @property
    def n_users(self) -> int:
        return len(self.nodes)

    @property
    def shape(self) -> tuple:
        return tuple(len(n) for n in self.nodes)

    def node_index(self, user: int, t: float) -> int:
        """Index of ``t`` on ``user``'s grid; no interpolation between nodes."""
        nodes = self.nodes[user]
        k = int(np.argmin(np.abs(nodes - t)))
        scale = max(1.0, abs(float(t)))
        if abs(nodes[k] - t) > 1e-12 * scale:
            raise OffGridError(f"type {t!r} is not a grid node of user {user}")
        return k


def build_grid(profiles: Sequence[UserProfile], resolution: int) -> TypeGrid:
    """Uniformly spaced grid with ``resolution`` nodes per non-degenerate user."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    nodes, weights, probs = [], [], []
    for prof in profiles:
        dist = prof.type_dist
        if dist.is_point_mass:
            nodes.append(np.array([dist.value]))
            weights.append(np.ones(1))
            probs.append(np.ones(1))
            continue
        t = np.linspace(dist.low, dist.high, resolution)
        w = trapezoid_weights(t)
        mass = w * np.asarray(dist.pdf(t), dtype=float)
        total = mass.sum()
        if not total > 0:
            raise ValueError("type density integrates to zero on the grid")
        nodes.append(t)
        weights.append(w)
        probs.append(mass / total)
    return TypeGrid(tuple(nodes), tuple(weights), tuple(probs), int(resolution))


@dataclass(frozen=True, eq=False)
class MechanismTable:
    """A discretised mechanism: allocation at every joint node, interim costs per user.

    ``allocation`` has shape ``grid.shape + (N, M)``; ``allocation[k1, ..., kN]``
    is the allocation when user ``i`` reports node ``ki``. ``costs[i][k]`` is
    the expected payment of user ``i`` reporting its ``k``-th node.
    """

    grid: TypeGrid
    allocation: np.ndarray
    costs: tuple
    notes: tuple = ()

    def __post_init__(self):
        alloc = _readonly(self.allocation)
        n = self.grid.n_users
        if alloc.ndim != n + 2 or alloc.shape[:n] != self.grid.shape or alloc.shape[n] != n:
            raise ValueError(f"allocation shape {alloc.shape} does not match grid {self.grid.shape}")
        if not is_feasible(alloc):
            raise InfeasibleAllocation("mechanism table contains an infeasible allocation")
        costs = tuple(_readonly(c) for c in self.costs)
        if len(costs) != n:
            raise ValueError("need one cost schedule per user")
        for i, c in enumerate(costs):
            if c.shape != (self.grid.shape[i],):
                raise ValueError(f"cost schedule of user {i} has shape {c.shape}")
            if not np.all(np.isfinite(c)):
                raise ValueError(f"cost schedule of user {i} is not finite")
        object.__setattr__(self, "allocation", alloc)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "notes", tuple(self.notes))

    @classmethod
    def zeros(cls, grid: TypeGrid, n_resources: int) -> "MechanismTable":
        """The mechanism that allocates nothing and charges nothing."""
        alloc = np.zeros(grid.shape + (grid.n_users, n_resources))
        return cls(grid, alloc, tuple(np.zeros(r) for r in grid.shape))

    @property
    def n_users(self) -> int:
        return self.grid.n_users

    @property
    def n_resources(self) -> int:
        return self.allocation.shape[-1]

    def allocation_at(self, index: Sequence[int]) -> Allocation:
        return Allocation(self.allocation[tuple(index)])

    def cost_at(self, user: int, node: int) -> float:
        return float(self.costs[user][node])
