"""Exception hierarchy shared by every module of the package."""


class AuctionError(Exception):
    """Base class for all errors raised by cloudauction."""


class CatalogError(AuctionError, ValueError):
    """Invalid resource catalog (empty or non-positive group sizes)."""


class IndexOutOfRange(AuctionError, IndexError):
    """Group, rank or flat resource index outside the catalog."""


class DomainError(AuctionError, ValueError):
    """A valuation or derivative was evaluated at a singular type."""


class HazardUndefinedError(AuctionError, ValueError):
    """The hazard term (1 - F) / f cannot be formed (zero density or point mass)."""


class OffGridError(AuctionError, LookupError):
    """A type value is not a node of the user's type grid."""


class InfeasibleAllocation(AuctionError, ValueError):
    """An allocation violates the box or per-resource supply constraints."""


class SearchSpaceError(AuctionError, RuntimeError):
    """The brute-force oracle was asked to search beyond its budget."""


class ScenarioError(AuctionError, ValueError):
    """A scenario file or preset failed to parse or validate."""


class RegularityWarning(UserWarning):
    """The solved allocation is not monotone in the envelope sense."""


class AssumptionWarning(UserWarning):
    """A valuation is not non-decreasing and concave on its type domain."""
