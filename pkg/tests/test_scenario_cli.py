import csv
import json

import numpy as np
import pytest

from cloudauction.cli import main, sweep_rows
from cloudauction.errors import ScenarioError
from cloudauction.scenario import PRESET_NAMES, emit, load_scenario, parse, preset, to_dict


def _posted_price(tmp_path, **extra):
    cfg = {
        "name": "posted-price",
        "groups": [1],
        "resolution": 201,
        "users": [{"distribution": {"kind": "uniform", "low": 0.0, "high": 1.0},
                   "valuations": [{"family": "linear", "param": 10.0}]}],
    }
    cfg.update(extra)
    path = tmp_path / "posted.json"
    path.write_text(json.dumps(cfg))
    return path


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_presets_exist():
    assert set(PRESET_NAMES) == {"example1-basic", "example2-symmetric", "example3-asymmetric", "factors-study"}


def test_example3_parameters():
    cfg = load_scenario("example3-asymmetric")
    u1, u2 = cfg.users
    assert [v.param for v in u1.valuations] == [10.0, 20.0, 1.25e6, 3.75e6]
    assert [v.param for v in u2.valuations] == [10.0, 20.0, 1.25e6, 3.75e6]
    assert u1.distribution.kind == "power" and u1.distribution.exponent == 2.0
    assert u2.distribution.kind == "uniform"
    assert cfg.sweep.fixed == ((2, 0.6),)


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_round_trip(name, tmp_path):
    cfg = preset(name)
    assert parse(emit(cfg)) == cfg
    path = tmp_path / "cfg.json"
    path.write_text(emit(cfg))
    assert load_scenario(path) == cfg


def test_parse_error_reports_position():
    with pytest.raises(ScenarioError, match="line 3"):
        parse('{\n  "groups": [1],\n  "users": [,]\n}')


def test_unknown_preset_and_missing_file():
    with pytest.raises(ScenarioError, match="unknown preset"):
        preset("example9")
    with pytest.raises(ScenarioError, match="neither a preset"):
        load_scenario("/nonexistent/cfg.json")


def test_validation_lists_offending_fields():
    data = to_dict(preset("example1-basic"))
    data["users"][1]["valuations"].pop()
    data["users"][0]["valuations"][0]["family"] = "cubic"
    data["users"][0]["premium"] = -1
    with pytest.raises(ScenarioError) as err:
        parse(json.dumps(data))
    msg = str(err.value)
    assert "users[2].valuations: expected 4 entries, got 3" in msg
    assert "users[1].valuations[1].family" in msg
    assert "users[1].premium" in msg


def test_validation_of_sweep_and_singular_support():
    data = to_dict(preset("example3-asymmetric"))
    data["sweep"]["fixed"] = {"2": 1.7}
    data["users"][1]["distribution"]["low"] = 0.0
    with pytest.raises(ScenarioError) as err:
        parse(json.dumps(data))
    assert "sweep.fixed[2]" in str(err.value)
    assert "singular at t=0" in str(err.value)
    data = to_dict(preset("example3-asymmetric"))
    data["sweep"] = {"user": 3, "fixed": {}}
    with pytest.raises(ScenarioError, match="sweep.user"):
        parse(json.dumps(data))
    with pytest.raises(ScenarioError, match="missing field"):
        parse(json.dumps({"groups": [1]}))
    with pytest.raises(ScenarioError, match="expected a number"):
        parse(json.dumps({"groups": [1], "users": [{"distribution": {"kind": "uniform"},
                                                     "valuations": [{"family": "linear", "param": "ten"}]}]}))


def test_resolution_override_validated():
    with pytest.raises(ScenarioError):
        preset("example1-basic").with_resolution(1)


def test_cli_presets(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in PRESET_NAMES)
    assert main(["presets", "--emit", "factors-study"]) == 0
    assert parse(capsys.readouterr().out) == preset("factors-study")


def test_cli_solve_example1(tmp_path, capsys):
    assert main(["solve", "example1-basic", "--resolution", "51", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["passed"]
    assert set(summary["cases"]["base"]["verification"]) >= {"ir", "ic", "envelope", "monotonicity"}
    rows = _read(tmp_path / "mechanism.csv")
    assert len(rows) == 51 * 51
    assert list(rows[0])[:2] == ["t1", "t2"] and "c2" in rows[0]
    assert "overall: PASS" in (tmp_path / "report.txt").read_text()
    assert load_scenario(tmp_path / "scenario.json") == preset("example1-basic").with_resolution(51)


def test_cli_posted_price_revenue(tmp_path):
    path = _posted_price(tmp_path)
    assert main(["solve", str(path), "--out", str(tmp_path / "out")]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["cases"]["base"]["revenue"] == pytest.approx(2.5, abs=1e-3)


def test_cli_symmetric_bundles(tmp_path):
    assert main(["solve", "example2-symmetric", "--resolution", "21", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["cases"]["base"]["allocation"]["whole_group_fraction"] == 1.0


def test_cli_oracle_and_verify(tmp_path, capsys):
    assert main(["verify", "example3-asymmetric", "--resolution", "15", "--oracle-steps", "3",
                 "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "oracle PASS" in out
    assert not (tmp_path / "mechanism.csv").exists()


def test_cli_exit_code_on_failed_verification(tmp_path):
    data = to_dict(preset("example1-basic"))
    for u in data["users"]:
        for v in u["valuations"]:
            if v["family"] == "linear_log":
                v["family"] = "log_inverse"
    path = tmp_path / "irregular.json"
    path.write_text(json.dumps(data))
    assert main(["solve", str(path), "--resolution", "21", "--out", str(tmp_path / "o")]) == 1
    report = (tmp_path / "o" / "report.txt").read_text()
    assert "IR FAIL" in report and "note:" in report


def test_cli_tolerance_flag(tmp_path):
    # a negative tolerance makes even exact checks fail
    assert main(["solve", "example1-basic", "--resolution", "11", "--tolerance", "-1", "--out", str(tmp_path)]) == 1


def test_cli_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert main(["solve", str(bad)]) == 2
    assert "parse error" in capsys.readouterr().err
    assert main(["sweep", "example1-basic", "--out", str(tmp_path)]) == 2


def test_cli_output_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["solve", "example3-asymmetric", "--resolution", "21", "--out", str(tmp_path / d)]) == 0
        assert main(["sweep", "example3-asymmetric", "--resolution", "21", "--out", str(tmp_path / d)]) == 0
    for name in ("mechanism.csv", "summary.json", "report.txt", "sweep.csv", "scenario.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_columns_and_turning_point(tmp_path):
    assert main(["sweep", "example3-asymmetric", "--resolution", "101", "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "sweep.csv")
    assert list(rows[0])[:4] == ["swept_type", "u1", "u2", "revenue"]
    assert [f"winner_r{j}" for j in range(1, 5)] == list(rows[0])[-4:]
    winners = [r["winner_r1"] for r in rows]
    first_user1 = winners.index("1")
    assert set(winners[:first_user1]) == {"2"} and set(winners[first_user1:]) == {"1"}
    step = float(rows[1]["swept_type"]) - float(rows[0]["swept_type"])
    lo, hi = float(rows[first_user1 - 1]["swept_type"]), float(rows[first_user1]["swept_type"])
    assert lo <= 0.5 + step and hi >= 0.5 - step


def test_sweep_never_winning_user_is_flat_zero():
    cfg = preset("example3-asymmetric")
    data = to_dict(cfg)
    data["sweep"]["fixed"] = {"2": 1.0}  # user 2 at the top of its support always wins
    rows = sweep_rows(parse(json.dumps(data)).with_resolution(21))
    assert all(r["u1"] == 0.0 for r in rows)


def test_factors_study_dominance():
    cfg = preset("factors-study").with_resolution(51)
    cases = {c.label: c for c in cfg.cases}
    with_premium = sweep_rows(cfg, cases["premium-only"])
    plain = sweep_rows(cfg, cases["no-factor"])
    u_p = np.array([r["u1"] for r in with_premium])
    u_0 = np.array([r["u1"] for r in plain])
    assert np.all(u_p >= u_0 - 1e-9)
    assert np.any(u_p > u_0 + 1e-6)


def test_resolve_per_point(tmp_path):
    assert main(["sweep", "example3-asymmetric", "--resolution", "21", "--resolve-per-point",
                 "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "sweep.csv")
    assert all(float(r["u2"]) == 0.0 for r in rows)
    for r in rows:
        assert float(r["revenue"]) == pytest.approx(float(r["c1"]) + float(r["c2"]))
