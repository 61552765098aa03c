"""Valuations, their type-derivatives and virtual valuations.

All functions accept a scalar or an array of types and return the same shape.
Derivatives are analytic per family; finite differences only appear in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, HazardUndefinedError
from .model import TypeDistribution, ValuationFunction

# Densities below this are treated as zero when forming the hazard term.
MIN_DENSITY = 1e-12

# Families whose value is singular (or defined only as a limit) at t = 0.
_POSITIVE_TYPE_ONLY = {"log_inverse", "sqrt_log", "linear_log"}


def _as_array(t):
    return np.asarray(t, dtype=float)


def _unwrap(out):
    return out[()] if out.ndim == 0 else out


def eval_valuation(v: ValuationFunction, t):
    """Value of ``v`` at type ``t``."""
    t = _as_array(t)
    fam, a = v.family, v.param
    if fam == "custom":
        return _unwrap(np.asarray(v.fn(t), dtype=float) * np.ones_like(t))
    if fam in _POSITIVE_TYPE_ONLY:
        if np.any(t <= 0):
            raise DomainError(f"{fam} valuation is singular at t <= 0")
    elif np.any(t < 0):
        raise DomainError("types must be non-negative")
    if fam == "linear":
        out = a * t
    elif fam == "log_inverse":
        out = np.log1p(a / t)
    elif fam == "sqrt_linear":
        out = a * np.sqrt(t)
    elif fam == "sqrt_log":
        s = np.sqrt(t)
        out = s * np.log1p(a / s)
    else:  # linear_log
        out = t * np.log1p(a / t)
    return _unwrap(out)


def eval_derivative(v: ValuationFunction, t):
    """Analytic derivative of ``v`` with respect to the type."""
    t = _as_array(t)
    fam, a = v.family, v.param
    if fam == "custom":
        return _unwrap(np.asarray(v.dfn(t), dtype=float) * np.ones_like(t))
    if fam == "linear":
        if np.any(t < 0):
            raise DomainError("types must be non-negative")
        return _unwrap(np.full(t.shape, a))
    if np.any(t <= 0):
        raise DomainError(f"{fam} derivative is singular at t <= 0")
    if fam == "log_inverse":
        out = -a / (t * (t + a))
    elif fam == "sqrt_linear":
        out = a / (2 * np.sqrt(t))
    elif fam == "sqrt_log":
        s = np.sqrt(t)
        out = (np.log1p(a / s) - a / (s + a)) / (2 * s)
    else:  # linear_log
        out = np.log1p(a / t) - a / (t + a)
    return _unwrap(out)


def hazard(dist: TypeDistribution, t):
    """Inverse hazard rate ``(1 - F(t)) / f(t)``."""
    if dist.is_point_mass:
        raise HazardUndefinedError("point-mass types have no hazard term")
    t = _as_array(t)
    dens = _as_array(dist.pdf(t))
    if np.any(dens < MIN_DENSITY):
        raise HazardUndefinedError("type density vanishes; hazard term undefined")
    return _unwrap((1.0 - _as_array(dist.cdf(t))) / dens)


def virtual_valuation(v: ValuationFunction, dist: TypeDistribution, t):
    """Myerson virtual valuation ``v(t) - (1 - F(t)) / f(t) * v'(t)``.

    The hazard term is skipped where ``F(t) = 1`` so the top of the support
    returns ``v(t_high)`` exactly.
    """
    t = _as_array(t)
    flat_t = np.atleast_1d(t)
    rent_factor = np.atleast_1d(_as_array(hazard(dist, flat_t)))
    out = np.atleast_1d(_as_array(eval_valuation(v, flat_t))).copy()
    live = rent_factor != 0
    if np.any(live):
        out[live] -= rent_factor[live] * np.atleast_1d(eval_derivative(v, flat_t[live]))
    return _unwrap(out.reshape(t.shape))


@dataclass(frozen=True)
class AssumptionReport:
    non_decreasing: bool
    concave: bool

    @property
    def holds(self) -> bool:
        return self.non_decreasing and self.concave


def check_assumptions(v: ValuationFunction, low: float, high: float, samples: int = 257) -> AssumptionReport:
    """Report whether ``v`` is non-decreasing and concave on ``[low, high]``.

    Violators are reported, never rejected. The check samples the analytic
    derivative on the open interval, so singular endpoints are allowed.
    """
    eps = (high - low) * 1e-6
    t = np.linspace(low + eps, high, samples)
    d = np.asarray(eval_derivative(v, t), dtype=float)
    scale = max(1.0, float(np.max(np.abs(d))))
    non_decreasing = bool(np.all(d >= -1e-12 * scale))
    concave = bool(np.all(np.diff(d) <= 1e-9 * scale))
    return AssumptionReport(non_decreasing, concave)
