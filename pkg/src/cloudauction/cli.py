"""Command-line front end: solve, sweep and verify scenarios.

Every subcommand writes plain files under ``--out``:

* ``scenario.json``   the resolved configuration
* ``mechanism.csv``   one row per joint node with allocations and interim costs
* ``sweep.csv``       one row per swept type (``sweep-<case>.csv`` for factor studies):
  swept_type, u1..uN, revenue, c1..cN, winner_r1..winner_rM
* ``report.txt``      human-readable verification summary
* ``summary.json``    the same, machine-readable

The exit code is 0 when every requested verification passes, 1 when one
fails and 2 on a usage, configuration or solver error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import AuctionError, RegularityWarning
from .model import TypeDistribution, UserProfile, build_grid, check_profiles
from .scenario import PRESET_NAMES, FactorCase, ScenarioConfig, emit, load_scenario, preset
from .solver import allocate_on_nodes, expected_revenue, optimize_allocation_at, solve_mechanism, virtual_surplus_at
from .utility import surplus_term, valuation_table
from .valuation import eval_derivative, hazard
from .verification import DEFAULT_TOL, oracle_allocation_search, verify_all

ORACLE_TOL = 1e-9


def _cases(cfg: ScenarioConfig) -> list:
    return list(cfg.cases) if cfg.cases else [None]


def _label(case: Optional[FactorCase]) -> str:
    return "base" if case is None else case.label


def _solve_case(cfg: ScenarioConfig, case: Optional[FactorCase]):
    profiles = cfg.profiles(case)
    grid = build_grid(profiles, cfg.resolution)
    with warnings.catch_warnings():
        # irregularity is recorded in mech.notes and the report
        warnings.simplefilter("ignore", RegularityWarning)
        mech = solve_mechanism(cfg.catalog, profiles, grid)
    return profiles, mech


def _oracle_check(cfg, profiles, mech, steps: int) -> dict:
    """Compare the solver with the fractional-grid oracle at a few joint nodes."""
    grid = mech.grid
    picks = sorted({0, cfg.resolution // 3, cfg.resolution // 2, (2 * cfg.resolution) // 3, cfg.resolution - 1})
    worst = -np.inf
    checked = 0
    for k in picks:
        joint = [nodes[min(k, len(nodes) - 1)] for nodes in grid.nodes]
        fast = virtual_surplus_at(cfg.catalog, profiles, joint, optimize_allocation_at(cfg.catalog, profiles, joint))
        slow = virtual_surplus_at(cfg.catalog, profiles, joint,
                                  oracle_allocation_search(cfg.catalog, profiles, joint, steps))
        worst = max(worst, slow - fast)
        checked += 1
    return {"passed": bool(worst <= ORACLE_TOL), "nodes_checked": checked, "max_oracle_gain": float(max(worst, 0.0)),
            "steps": steps}


def _verify_case(cfg, profiles, mech, tol: float, oracle_steps: Optional[int]) -> dict:
    reports = {k: r.to_dict() | {"summary": r.summary()} for k, r in verify_all(cfg.catalog, profiles, mech, tol).items()}
    if oracle_steps:
        oracle = _oracle_check(cfg, profiles, mech, oracle_steps)
        oracle["summary"] = (f"oracle {'PASS' if oracle['passed'] else 'FAIL'}  max gain over solver "
                             f"{oracle['max_oracle_gain']:.3e} at {oracle['nodes_checked']} nodes (steps={oracle_steps})")
        reports["oracle"] = oracle
    return reports


def _bundle_summary(cfg, mech) -> dict:
    """Share of joint nodes where each user holds whole groups only."""
    alloc = mech.allocation
    sums = np.add.reduceat(alloc, list(cfg.catalog.offsets), axis=-1)
    whole = np.all((np.isclose(sums, 0.0)) | np.isclose(sums, np.array(cfg.catalog.group_sizes)), axis=(-1, -2))
    return {"whole_group_fraction": float(np.mean(whole))}


def write_mechanism_csv(path: Path, cfg: ScenarioConfig, mech) -> None:
    n, m = mech.n_users, mech.n_resources
    header = [f"t{i + 1}" for i in range(n)]
    header += [f"p{i + 1}_r{j + 1}" for i in range(n) for j in range(m)]
    header += [f"c{i + 1}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for idx in np.ndindex(*mech.grid.shape):
            t = [mech.grid.nodes[i][k] for i, k in enumerate(idx)]
            p = mech.allocation[idx].ravel()
            c = [mech.costs[i][k] for i, k in enumerate(idx)]
            w.writerow([f"{x:.10g}" for x in (*t, *p, *c)])


def _winner(column: np.ndarray) -> str:
    """User number(s) holding a resource; '0' when nobody does."""
    top = column.max()
    if top <= 0:
        return "0"
    return "|".join(str(i + 1) for i in np.flatnonzero(np.isclose(column, top)))


def _hazard_utility(prof: UserProfile, t: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``(1 - F(t)) / f(t) * sum_j v'_j(t) p_j`` row by row; zero for a point mass."""
    out = np.zeros(len(t))
    if prof.type_dist.is_point_mass:
        return out
    rent = np.atleast_1d(hazard(prof.type_dist, t))
    for j, v in enumerate(prof.valuations):
        held = (p[:, j] != 0) & (rent != 0)
        if np.any(held):
            out[held] += rent[held] * np.atleast_1d(eval_derivative(v, t[held])) * p[held, j]
    return out


def sweep_rows(cfg: ScenarioConfig, case: Optional[FactorCase] = None, resolve_per_point: bool = False) -> list:
    """Utilities, payments and winners along the sweep of one user.

    The allocation rule is solved under the priors and evaluated at the
    swept type with every opponent at its fixed type. Each user's utility is
    the optimal-mechanism form ``(1 - F) / f * sum_j v'_j p_j`` at that
    allocation, so a loser gets zero, and the user pays its value plus
    premium/discount term minus that utility. With ``resolve_per_point`` the
    opponents are point masses at their fixed types: they compete with raw
    valuations, keep no utility and pay their full value.
    """
    if cfg.sweep is None:
        raise AuctionError(f"scenario {cfg.name!r} has no sweep section")
    cat = cfg.catalog
    s = cfg.sweep.user - 1
    fixed = {k - 1: v for k, v in cfg.sweep.fixed}
    profiles = cfg.profiles(case)
    if resolve_per_point:
        profiles = [
            p if i == s else UserProfile(TypeDistribution.point_mass(fixed[i]), p.valuations, p.premium, p.discount)
            for i, p in enumerate(profiles)
        ]
    check_profiles(cat, profiles)
    nodes = build_grid(profiles, cfg.resolution).nodes[s]
    node_lists = [nodes if i == s else np.array([fixed[i]]) for i in range(len(profiles))]
    alloc = allocate_on_nodes(cat, profiles, node_lists).reshape(len(nodes), len(profiles), cat.n_resources)

    utils, pays = [], []
    for i, prof in enumerate(profiles):
        t_i = nodes if i == s else np.full(len(nodes), fixed[i])
        p_i = alloc[:, i, :]
        gross = np.einsum("kj,kj->k", p_i, valuation_table(prof, t_i))
        gross = gross + surplus_term(cat, p_i, prof.premium_at(t_i), prof.discount_at(t_i))
        u = _hazard_utility(prof, t_i, p_i)
        utils.append(u)
        pays.append(gross - u)

    n = len(profiles)
    rows = []
    for k, t in enumerate(nodes):
        row = {"swept_type": float(t)}
        row.update({f"u{i + 1}": float(utils[i][k]) for i in range(n)})
        row["revenue"] = float(sum(c[k] for c in pays))
        row.update({f"c{i + 1}": float(pays[i][k]) for i in range(n)})
        row.update({f"winner_r{j + 1}": _winner(alloc[k, :, j]) for j in range(cat.n_resources)})
        rows.append(row)
    return rows


def write_rows(path: Path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})


def _sweep_name(case) -> str:
    return "sweep.csv" if case is None else f"sweep-{case.label}.csv"


def run_solve(cfg: ScenarioConfig, out: Path, tol: float = DEFAULT_TOL, oracle_steps: Optional[int] = None,
              write_table: bool = True) -> dict:
    """Solve every case of ``cfg``, verify it and write the artefacts under ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.json").write_text(emit(cfg))
    summary = {"scenario": cfg.name, "resolution": cfg.resolution, "tolerance": tol, "cases": {}}
    for case in _cases(cfg):
        profiles, mech = _solve_case(cfg, case)
        label = _label(case)
        reports = _verify_case(cfg, profiles, mech, tol, oracle_steps)
        summary["cases"][label] = {
            "revenue": expected_revenue(cfg.catalog, profiles, mech),
            "notes": list(mech.notes),
            "allocation": _bundle_summary(cfg, mech),
            "verification": reports,
            "passed": all(r["passed"] for r in reports.values()),
        }
        if write_table:
            name = "mechanism.csv" if case is None else f"mechanism-{label}.csv"
            write_mechanism_csv(out / name, cfg, mech)
    summary["passed"] = all(c["passed"] for c in summary["cases"].values())
    _write_reports(out, summary)
    return summary


def run_sweep(cfg: ScenarioConfig, out: Path, resolve_per_point: bool = False) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.json").write_text(emit(cfg))
    written = {}
    for case in _cases(cfg):
        rows = sweep_rows(cfg, case, resolve_per_point)
        path = out / _sweep_name(case)
        write_rows(path, rows)
        written[_label(case)] = str(path)
    return written


def _write_reports(out: Path, summary: dict) -> None:
    lines = [f"scenario {summary['scenario']}  resolution {summary['resolution']}  tolerance {summary['tolerance']:g}"]
    for label, case in summary["cases"].items():
        lines.append("")
        lines.append(f"[{label}] expected revenue {case['revenue']:.6f}  "
                     f"{'ALL PASS' if case['passed'] else 'FAILURES'}")
        lines.extend("  " + r["summary"] for r in case["verification"].values())
        lines.extend("  note: " + n for n in case["notes"])
    lines.append("")
    lines.append("overall: " + ("PASS" if summary["passed"] else "FAIL"))
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cloudauction", description="Revenue-optimal combinatorial resource auctions.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", help=f"preset name ({', '.join(PRESET_NAMES)}) or path to a JSON scenario")
        p.add_argument("--resolution", type=int, default=None, help="grid nodes per user (default: scenario value)")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: scenario output_dir)")

    p = sub.add_parser("solve", help="solve, verify and write the mechanism table")
    common(p)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOL, help="absolute IR/IC tolerance")
    p.add_argument("--oracle-steps", type=int, default=None, help="also compare against the fractional-grid oracle")

    p = sub.add_parser("verify", help="solve and print the verification report")
    common(p)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOL, help="absolute IR/IC tolerance")
    p.add_argument("--oracle-steps", type=int, default=None, help="also compare against the fractional-grid oracle")

    p = sub.add_parser("sweep", help="sweep one user's type with opponents fixed")
    common(p)
    p.add_argument("--resolve-per-point", action="store_true",
                   help="solve with opponents as point masses at their fixed types")

    p = sub.add_parser("presets", help="list built-in scenarios")
    p.add_argument("--emit", metavar="NAME", default=None, help="print one preset as JSON")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "presets":
            if args.emit:
                sys.stdout.write(emit(preset(args.emit)))
            else:
                for name in PRESET_NAMES:
                    print(f"{name:22s} {preset(name).description}")
            return 0
        cfg = load_scenario(args.scenario)
        if args.resolution is not None:
            cfg = cfg.with_resolution(args.resolution)
        out = args.out if args.out is not None else Path(cfg.output_dir)
        if args.command == "sweep":
            for label, path in run_sweep(cfg, out, args.resolve_per_point).items():
                print(f"{label}: {path}")
            return 0
        summary = run_solve(cfg, out, args.tolerance, args.oracle_steps, write_table=args.command == "solve")
        print((out / "report.txt").read_text(), end="")
        return 0 if summary["passed"] else 1
    except (AuctionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
