"""Scenario configuration: JSON schema, built-in presets, validation and round-trip.

Users and resources are numbered from 1 in configuration files and messages.
The schema is documented in the README.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

from .errors import ScenarioError
from .model import ResourceCatalog, TypeDistribution, UserProfile, ValuationFunction, build_catalog

DISTRIBUTION_KINDS = ("uniform", "power", "point")
VALUATION_FAMILIES = ("linear", "log_inverse", "sqrt_linear", "sqrt_log", "linear_log")

# Log and square-root families are singular at t = 0, so presets start just above it.
PRESET_LOW = 0.01


@dataclass(frozen=True)
class DistributionSpec:
    kind: str = "uniform"
    low: float = 0.0
    high: float = 1.0
    exponent: Optional[float] = None
    value: Optional[float] = None

    def build(self) -> TypeDistribution:
        if self.kind == "uniform":
            return TypeDistribution.uniform(self.low, self.high)
        if self.kind == "power":
            return TypeDistribution.power_cdf(self.exponent, self.low, self.high)
        return TypeDistribution.point_mass(self.value)


@dataclass(frozen=True)
class ValuationSpec:
    family: str
    param: float

    def build(self) -> ValuationFunction:
        return getattr(ValuationFunction, self.family)(self.param)


@dataclass(frozen=True)
class UserSpec:
    distribution: DistributionSpec
    valuations: tuple
    premium: float = 0.0
    discount: float = 0.0

    def build(self, premium: Optional[float] = None, discount: Optional[float] = None) -> UserProfile:
        return UserProfile(
            type_dist=self.distribution.build(),
            valuations=tuple(v.build() for v in self.valuations),
            premium=self.premium if premium is None else premium,
            discount=self.discount if discount is None else discount,
        )


@dataclass(frozen=True)
class SweepSpec:
    """Sweep ``user`` over its grid while every other user sits at ``fixed``.

    ``fixed`` maps opponent numbers (1-based) to their type values.
    """

    user: int
    fixed: tuple  # ((user, value), ...)


@dataclass(frozen=True)
class FactorCase:
    """Premium and discount for one comparison run.

    They replace the configured factors of the users listed in ``users``
    (1-based); an empty tuple means every user.
    """

    label: str
    premium: float
    discount: float
    users: tuple = ()

    def applies_to(self, user: int) -> bool:
        return not self.users or user in self.users


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    groups: tuple
    users: tuple
    resolution: int = 51
    sweep: Optional[SweepSpec] = None
    cases: tuple = ()
    output_dir: str = "out"
    description: str = ""

    @property
    def catalog(self) -> ResourceCatalog:
        return build_catalog(self.groups)

    def profiles(self, case: Optional[FactorCase] = None) -> list:
        if case is None:
            return [u.build() for u in self.users]
        return [u.build(case.premium, case.discount) if case.applies_to(i) else u.build()
                for i, u in enumerate(self.users, start=1)]

    def with_resolution(self, resolution: int) -> "ScenarioConfig":
        cfg = replace(self, resolution=int(resolution))
        validate(cfg)
        return cfg


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _linear_family_user(dist: DistributionSpec, premium=0.0, discount=0.0) -> UserSpec:
    vals = (
        ValuationSpec("linear", 10.0),
        ValuationSpec("linear", 20.0),
        ValuationSpec("linear_log", 1.25e6),
        ValuationSpec("linear_log", 3.75e6),
    )
    return UserSpec(dist, vals, premium, discount)


def _sqrt_family_user(dist: DistributionSpec) -> UserSpec:
    vals = (
        ValuationSpec("sqrt_linear", 10.0),
        ValuationSpec("sqrt_linear", 20.0),
        ValuationSpec("sqrt_log", 1.25e6),
        ValuationSpec("sqrt_log", 3.75e6),
    )
    return UserSpec(dist, vals)


_UNIFORM = DistributionSpec("uniform", PRESET_LOW, 1.0)
_SQUARE = DistributionSpec("power", PRESET_LOW, 1.0, exponent=2.0)
_FIXED_T2 = SweepSpec(user=1, fixed=((2, 0.6),))


def _presets() -> dict:
    return {
        "example1-basic": ScenarioConfig(
            name="example1-basic",
            groups=(2, 2),
            users=(_linear_family_user(_UNIFORM), _linear_family_user(_UNIFORM)),
            description="Two symmetric users, two groups of two resources, no premium or discount.",
        ),
        "example2-symmetric": ScenarioConfig(
            name="example2-symmetric",
            groups=(2, 2),
            users=(_linear_family_user(_UNIFORM, 4.0, 1.5), _linear_family_user(_UNIFORM, 4.0, 1.5)),
            sweep=_FIXED_T2,
            description="Symmetric users with premium 4 and discount 1.5; bundles go to single users.",
        ),
        "example3-asymmetric": ScenarioConfig(
            name="example3-asymmetric",
            groups=(2, 2),
            users=(_sqrt_family_user(_SQUARE), _linear_family_user(_UNIFORM)),
            sweep=_FIXED_T2,
            description="User 1 has F(t) = t^2 and square-root valuations; user 2 is uniform with linear ones.",
        ),
        "factors-study": ScenarioConfig(
            name="factors-study",
            groups=(2, 2),
            users=(_linear_family_user(_UNIFORM), _linear_family_user(_UNIFORM)),
            sweep=_FIXED_T2,
            cases=(
                FactorCase("premium+discount", 4.0, 1.5, users=(1,)),
                FactorCase("premium-only", 4.0, 0.0, users=(1,)),
                FactorCase("no-factor", 0.0, 0.0, users=(1,)),
            ),
            description="Premium/discount settings for user 1 on the symmetric base; user 2 has none.",
        ),
    }


PRESET_NAMES = tuple(_presets())


def preset(name: str) -> ScenarioConfig:
    table = _presets()
    if name not in table:
        raise ScenarioError(f"unknown preset {name!r}; known presets: {', '.join(table)}")
    return table[name]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _problems(cfg: ScenarioConfig) -> list:
    out = []
    if not cfg.groups or any(int(s) != s or s < 1 for s in cfg.groups):
        out.append("groups: every group needs a positive integer size")
        m = None
    else:
        m = int(sum(cfg.groups))
    if not cfg.users:
        out.append("users: at least one user is required")
    if int(cfg.resolution) != cfg.resolution or cfg.resolution < 2:
        out.append("resolution: must be an integer >= 2")
    for i, u in enumerate(cfg.users, start=1):
        d = u.distribution
        where = f"users[{i}].distribution"
        if d.kind not in DISTRIBUTION_KINDS:
            out.append(f"{where}.kind: {d.kind!r} not in {DISTRIBUTION_KINDS}")
        elif d.kind == "point":
            if d.value is None:
                out.append(f"{where}.value: required for a point mass")
        else:
            if not d.low < d.high:
                out.append(f"{where}: low must be below high")
            if d.low < 0:
                out.append(f"{where}.low: types must be non-negative")
            if d.kind == "power" and (d.exponent is None or d.exponent <= 0):
                out.append(f"{where}.exponent: must be positive")
        if m is not None and len(u.valuations) != m:
            out.append(f"users[{i}].valuations: expected {m} entries, got {len(u.valuations)}")
        for j, v in enumerate(u.valuations, start=1):
            if v.family not in VALUATION_FAMILIES:
                out.append(f"users[{i}].valuations[{j}].family: {v.family!r} not in {VALUATION_FAMILIES}")
            elif v.param < 0:
                out.append(f"users[{i}].valuations[{j}].param: must be non-negative")
            elif d.kind in ("uniform", "power") and d.low <= 0 and v.family in ("log_inverse", "sqrt_log", "linear_log", "sqrt_linear"):
                out.append(f"users[{i}].valuations[{j}]: {v.family} is singular at t=0; raise distribution.low above 0")
        for key in ("premium", "discount"):
            if getattr(u, key) < 0:
                out.append(f"users[{i}].{key}: must be non-negative")
    n = len(cfg.users)
    if cfg.sweep is not None:
        s = cfg.sweep
        if not 1 <= s.user <= n:
            out.append(f"sweep.user: {s.user} is not a user number (1..{n})")
        elif cfg.users[s.user - 1].distribution.kind == "point":
            out.append("sweep.user: the swept user needs a grid, not a point mass")
        fixed = dict(s.fixed)
        for k in range(1, n + 1):
            if k != s.user and k not in fixed:
                out.append(f"sweep.fixed: user {k} needs a fixed type")
        for k, val in fixed.items():
            if not 1 <= k <= n or k == s.user:
                out.append(f"sweep.fixed: {k} is not an opponent of the swept user")
                continue
            d = cfg.users[k - 1].distribution
            if d.kind != "point" and not d.low <= val <= d.high:
                out.append(f"sweep.fixed[{k}]: {val} outside [{d.low}, {d.high}]")
    for c, case in enumerate(cfg.cases, start=1):
        if case.premium < 0 or case.discount < 0:
            out.append(f"cases[{c}]: premium and discount must be non-negative")
        for k in case.users:
            if not 1 <= k <= n:
                out.append(f"cases[{c}].users: {k} is not a user number (1..{n})")
    return out


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    problems = _problems(cfg)
    if problems:
        raise ScenarioError("invalid scenario:\n  " + "\n  ".join(problems))
    return cfg


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def to_dict(cfg: ScenarioConfig) -> dict:
    def dist(d: DistributionSpec) -> dict:
        return {k: v for k, v in asdict(d).items() if v is not None}

    out = {
        "name": cfg.name,
        "description": cfg.description,
        "groups": list(cfg.groups),
        "resolution": cfg.resolution,
        "output_dir": cfg.output_dir,
        "users": [
            {
                "distribution": dist(u.distribution),
                "valuations": [asdict(v) for v in u.valuations],
                "premium": u.premium,
                "discount": u.discount,
            }
            for u in cfg.users
        ],
    }
    if cfg.sweep is not None:
        out["sweep"] = {"user": cfg.sweep.user, "fixed": {str(k): v for k, v in cfg.sweep.fixed}}
    if cfg.cases:
        out["cases"] = [asdict(c) | {"users": list(c.users)} for c in cfg.cases]
    return out


def emit(cfg: ScenarioConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2) + "\n"


def _field(obj: dict, key: str, where: str, default=...):
    if key in obj:
        return obj[key]
    if default is ...:
        raise ScenarioError(f"{where}.{key}: missing field")
    return default


def _num(x, where: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {x!r}")
    return float(x)


def from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ScenarioError("scenario: top level must be an object")
    users = []
    for i, u in enumerate(_field(data, "users", "scenario"), start=1):
        where = f"users[{i}]"
        d = _field(u, "distribution", where)
        opt = lambda k: None if d.get(k) is None else _num(d[k], f"{where}.distribution.{k}")
        dist = DistributionSpec(
            kind=str(_field(d, "kind", f"{where}.distribution")),
            low=_num(d.get("low", 0.0), f"{where}.distribution.low"),
            high=_num(d.get("high", 1.0), f"{where}.distribution.high"),
            exponent=opt("exponent"),
            value=opt("value"),
        )
        vals = tuple(
            ValuationSpec(str(_field(v, "family", f"{where}.valuations[{j}]")),
                          _num(_field(v, "param", f"{where}.valuations[{j}]"), f"{where}.valuations[{j}].param"))
            for j, v in enumerate(_field(u, "valuations", where), start=1)
        )
        users.append(UserSpec(dist, vals,
                              _num(u.get("premium", 0.0), f"{where}.premium"),
                              _num(u.get("discount", 0.0), f"{where}.discount")))
    sweep = None
    if data.get("sweep") is not None:
        s = data["sweep"]
        try:
            fixed = tuple(sorted((int(k), _num(v, f"sweep.fixed[{k}]")) for k, v in _field(s, "fixed", "sweep").items()))
        except ValueError as exc:
            raise ScenarioError(f"sweep.fixed: keys must be user numbers ({exc})") from None
        sweep = SweepSpec(int(_field(s, "user", "sweep")), fixed)
    cases = tuple(
        FactorCase(str(c.get("label", f"case-{k}")), _num(_field(c, "premium", f"cases[{k}]"), f"cases[{k}].premium"),
                   _num(_field(c, "discount", f"cases[{k}]"), f"cases[{k}].discount"),
                   tuple(int(u) for u in c.get("users", [])))
        for k, c in enumerate(data.get("cases", []), start=1)
    )
    cfg = ScenarioConfig(
        name=str(data.get("name", "scenario")),
        groups=tuple(int(g) for g in _field(data, "groups", "scenario")),
        users=tuple(users),
        resolution=int(data.get("resolution", 51)),
        sweep=sweep,
        cases=cases,
        output_dir=str(data.get("output_dir", "out")),
        description=str(data.get("description", "")),
    )
    return validate(cfg)


def parse(text: str) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return from_dict(data)


def load_scenario(source) -> ScenarioConfig:
    """Load a preset by name or a JSON scenario file by path."""
    source = str(source)
    if source in PRESET_NAMES:
        return preset(source)
    path = Path(source)
    if not path.is_file():
        raise ScenarioError(f"{source!r} is neither a preset ({', '.join(PRESET_NAMES)}) nor a file")
    return parse(path.read_text())
