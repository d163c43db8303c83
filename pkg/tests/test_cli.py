import json

import pytest

from scooter_charging.cli import WORKERS_ENV, _workers, build_parser, fmt, main
from scooter_charging.scenario import ScenarioError, build_design, parse_scenario, sweep_spec

SMALL = """
[params]
lam = 1.0

[design]
K = 10
Q = 20
total_n_br = 1000

[simulation]
horizon_h = 40.0
warmup_h = 10.0
cooldown_h = 5.0
"""


def write(tmp_path, text, name="s.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_solve_writes_outputs_and_manifest(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["solve", "--scenario", write(tmp_path, SMALL), "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"steady_counts.csv", "steady_summary.csv", "steady_summary.txt", "manifest.json"} <= names
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "solve" and set(man["outputs"]) >= {"steady_counts.csv"}
    assert "Z=" in capsys.readouterr().out


@pytest.mark.parametrize("command", ["solve", "simulate"])
def test_manifest_round_trip_is_byte_identical(tmp_path, command):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main([command, "--scenario", write(tmp_path, SMALL), "--out", str(first), "--seed", "4"]) == 0
    assert main([command, "--scenario", str(first / "manifest.json"), "--out", str(second)]) == 0
    for p in first.iterdir():
        assert (second / p.name).read_bytes() == p.read_bytes(), p.name


def test_zero_stations_means_depot_only(tmp_path, capsys):
    text = SMALL.replace("K = 10\nQ = 20", "K = 0")
    assert main(["solve", "--scenario", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 0
    assert "depot-only" in capsys.readouterr().out
    d = build_design(parse_scenario(text)).design
    assert d.depot_only and d.Q == 0 and not d.pi.any()


def test_parse_error_reports_line(tmp_path, capsys):
    bad = "[params]\nlam = 1.0\n\n[design\nK = 3\n"
    assert main(["solve", "--scenario", write(tmp_path, bad, "bad.toml"), "--out", str(tmp_path / "o")]) == 1
    assert "bad.toml:4:" in capsys.readouterr().err


@pytest.mark.parametrize("text,line", [
    ("[params]\nlam = 1.0\nspeed = 3\n", 3),
    ("[params]\nlam = 1.0\n[design]\nK = -2\n", 4),
    ("[design]\nK = 10\npi = [1, 2]\n", 3),
    ("[bogus]\nx = 1\n", 1),
    ("[sweep]\nparameter = 'lambda'\nvalues = [1, -5]\n", 3),
    ("[sweep]\nparameter = 'colour'\nvalues = [1]\n", 2),
    ("[optimizer]\nmode = 'guess'\n", 2),
])
def test_semantic_errors_carry_line_numbers(text, line):
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text, "x.toml")
    assert err.value.line == line
    assert str(err.value).startswith(f"x.toml:{line}:")


def test_no_steady_state_exits_two(tmp_path, capsys):
    text = SMALL.replace("total_n_br = 1000", "total_n_br = 3")
    assert main(["solve", "--scenario", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 2
    assert "no steady state" in capsys.readouterr().err


@pytest.mark.parametrize("command", ["simulate", "optimize"])
def test_seed_is_required(tmp_path, command):
    with pytest.raises(SystemExit) as err:
        main([command, "--scenario", write(tmp_path, SMALL), "--out", str(tmp_path / "o")])
    assert err.value.code not in (0, None)


def test_worker_count_precedence(monkeypatch):
    parse = build_parser().parse_args
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert _workers(parse(["solve"])) == 1
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert _workers(parse(["solve"])) == 3
    assert _workers(parse(["solve", "--workers", "2"])) == 2
    monkeypatch.setenv(WORKERS_ENV, "many")
    with pytest.raises(SystemExit):
        _workers(parse(["solve"]))


def test_battery_sweep_scales_charge_time():
    sc = parse_scenario("[sweep]\nparameter = 'B'\nvalues = [8, 12]\n")
    spec = sweep_spec(sc)
    assert spec.values == (8, 12)
    from scooter_charging.scenario import build_params
    p = build_params(sc.with_param("B", 12))
    assert p.B == 12 and sum(p.tau) == pytest.approx(12.0)


def test_number_format():
    assert fmt(1 / 3) == "0.333333"
    assert fmt(12345678.0) == "1.23457e+07"
    assert fmt(7) == "7"


@pytest.mark.parametrize("name", ["base_case", "verification", "demand_sweep"])
def test_shipped_scenarios_load(name):
    from pathlib import Path

    from scooter_charging.scenario import load_scenario

    load_scenario(Path(__file__).resolve().parents[1] / "scenarios" / f"{name}.toml")
