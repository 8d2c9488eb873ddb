"""End-to-end command-line pipelines over temp files."""
import json
import pathlib

import pytest

from freqalloc.assembly import ChipAssembly
from freqalloc.cli import ConfigError, main, parse_budget, parse_pair, parse_sigmas
from freqalloc.constraints import default_params, enumerate_records, uniform_tightening
from freqalloc.model import Solution, build, export_lp
from freqalloc.topology import Topology, square_grid

import dataclasses

ADAPTER = "python3 -m freqalloc.milp_adapter {lp} {out}"
UNIT_DIR = pathlib.Path(__file__).parent / "fixtures" / "units"


def write_unit_solution(tmp_path, preset="pbc1"):
    d = json.loads((UNIT_DIR / f"{preset}_3x3.json").read_text())
    path = tmp_path / "unit_sol.json"
    path.write_text(json.dumps(d["solution"]) + "\n")
    return path


@pytest.fixture
def grid22(tmp_path):
    path = tmp_path / "t.json"
    assert main(["topo", "--kind", "square", "--rows", "2", "--cols", "2",
                 "--out", str(path)]) == 0
    return path


def solve22(tmp_path, grid22):
    out = tmp_path / "s.json"
    code = main(["solve", "--topology", str(grid22), "--mode", "free",
                 "--eps-tol", "10", "--cmd", ADAPTER, "--out", str(out)])
    assert code == 0
    return out


# -- flag parsing helpers -----------------------------------------------------


def test_budget_formats():
    assert parse_budget("300") == 300.0
    assert parse_budget("30s") == 30.0
    assert parse_budget("5m") == 300.0
    assert parse_budget("1h") == 3600.0
    assert parse_budget("0.05s") == 0.05
    for bad in ("", "abc", "-3s", "0"):
        with pytest.raises(ConfigError):
            parse_budget(bad)


def test_pair_and_sigma_parsing():
    assert parse_pair("5000:5500", "window") == (5000.0, 5500.0)
    assert parse_sigmas("5,10,15") == [5.0, 10.0, 15.0]
    with pytest.raises(ConfigError):
        parse_pair("5000", "window")
    with pytest.raises(ConfigError):
        parse_sigmas("a,b")


# -- topo ----------------------------------------------------------------------


def test_topo_square_and_wrap(tmp_path):
    out = tmp_path / "sq.json"
    assert main(["topo", "--kind", "square", "--rows", "4", "--cols", "4",
                 "--out", str(out)]) == 0
    topo = Topology.from_json(out.read_text())
    assert topo.n_qubits == 16 and len(topo.edges) == 24

    wrapped = tmp_path / "wrapped.json"
    assert main(["topo", "--kind", "square", "--rows", "2", "--cols", "2",
                 "--bc", "PBC1", "--out", str(wrapped)]) == 0
    topo = Topology.from_json(wrapped.read_text())
    assert len(topo.edges) == 8 and len(topo.wrap_tags) == 4


def test_topo_hex_rings(tmp_path):
    out = tmp_path / "hex.json"
    assert main(["topo", "--kind", "hex", "--rings", "1", "--out", str(out)]) == 0
    topo = Topology.from_json(out.read_text())
    assert topo.geometry["kind"] == "hex_rings"
    assert max(topo.degree(q) for q in range(topo.n_qubits)) <= 3


def test_topo_bad_dims_exit_2(tmp_path):
    assert main(["topo", "--kind", "square", "--rows", "0", "--cols", "4",
                 "--out", str(tmp_path / "x.json")]) == 2
    assert main(["topo", "--kind", "hex", "--out", str(tmp_path / "x.json")]) == 2


# -- build ---------------------------------------------------------------------


def test_build_matches_library_export(tmp_path, grid22):
    out = tmp_path / "m.lp"
    assert main(["build", "--topology", str(grid22), "--mode", "free",
                 "--eps-tol", "10", "--out", str(out)]) == 0
    params = dataclasses.replace(default_params(), eps_tol=uniform_tightening(10.0))
    topo = Topology.from_json(grid22.read_text())
    model = build(topo, enumerate_records(topo, "free", params), params, "free")
    assert out.read_text() == export_lp(model)


def test_build_fixed_without_orientation_exit_2(tmp_path, grid22):
    assert main(["build", "--topology", str(grid22), "--mode", "fixed",
                 "--out", str(tmp_path / "m.lp")]) == 2


def test_build_config_params_override_window(tmp_path):
    topo_path = tmp_path / "one.json"
    one = square_grid(1, 1)
    topo_path.write_text(one.to_json())
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"params": {"f_window": [5000, 5010]}}))
    out = tmp_path / "m.lp"
    assert main(["build", "--topology", str(topo_path), "--window", "4000:9000",
                 "--config", str(cfg), "--out", str(out)]) == 0
    assert "5000 <= f_0 <= 5010" in out.read_text()


# -- solve / verify --------------------------------------------------------------


def test_solve_external_and_verify(tmp_path, grid22):
    sol_path = solve22(tmp_path, grid22)
    sol = Solution.from_json_dict(json.loads(sol_path.read_text()))
    assert sol.status == "optimal"
    assert sol.objective_value == pytest.approx(1570.0, abs=1e-6)
    assert main(["verify", "--topology", str(grid22), "--solution", str(sol_path),
                 "--eps-tol", "10"]) == 0
    report_path = tmp_path / "rep.json"
    assert main(["verify", "--topology", str(grid22), "--solution", str(sol_path),
                 "--eps-tol", "10", "--bounds", "base", "--out", str(report_path)]) == 0
    assert json.loads(report_path.read_text())["ok"] is True


def test_verify_flags_violation_exit_4(tmp_path, grid22):
    sol_path = solve22(tmp_path, grid22)
    d = json.loads(sol_path.read_text())
    qubits = sorted(d["frequencies_mhz"])
    d["frequencies_mhz"] = {q: 5100.0 for q in qubits}  # every pair collides
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    assert main(["verify", "--topology", str(grid22), "--solution", str(bad),
                 "--eps-tol", "10"]) == 4


def test_solve_missing_command_exit_2(tmp_path, grid22, monkeypatch):
    monkeypatch.delenv("FREQALLOC_SOLVER_CMD", raising=False)
    assert main(["solve", "--topology", str(grid22),
                 "--out", str(tmp_path / "s.json")]) == 2


def test_solve_command_from_env(tmp_path, grid22, monkeypatch):
    monkeypatch.setenv("FREQALLOC_SOLVER_CMD", ADAPTER)
    out = tmp_path / "s.json"
    assert main(["solve", "--topology", str(grid22), "--mode", "free",
                 "--eps-tol", "10", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["status"] == "optimal"


def test_solve_broken_command_exit_3(tmp_path, grid22):
    assert main(["solve", "--topology", str(grid22),
                 "--cmd", "no_such_solver_binary {lp} {out}",
                 "--out", str(tmp_path / "s.json")]) == 3


def test_solve_anneal_backend_deterministic(tmp_path):
    topo_path = tmp_path / "t3.json"
    assert main(["topo", "--kind", "square", "--rows", "3", "--cols", "3",
                 "--out", str(topo_path)]) == 0
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    common = ["solve", "--topology", str(topo_path), "--mode", "free",
              "--eps-tol", "10", "--backend", "anneal", "--seed", "3"]
    assert main(common + ["--out", str(a)]) == 0
    assert main(common + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(a.read_text())["status"] == "feasible"
    assert main(["verify", "--topology", str(topo_path), "--solution", str(a),
                 "--eps-tol", "10"]) == 0


def test_solve_anneal_parks_isolated_qubits(tmp_path):
    topo = Topology(n_qubits=3, edges=[(0, 1)])
    topo_path = tmp_path / "iso.json"
    topo_path.write_text(topo.to_json())
    out = tmp_path / "s.json"
    assert main(["solve", "--topology", str(topo_path), "--mode", "free",
                 "--backend", "anneal", "--out", str(out)]) == 0
    freqs = json.loads(out.read_text())["frequencies_mhz"]
    assert freqs["2"] == 5000.0  # window floor


# -- yield / threshold ------------------------------------------------------------


def test_yield_stdout_and_file_determinism(tmp_path, grid22, capsys):
    sol_path = solve22(tmp_path, grid22)
    base = ["yield", "--topology", str(grid22), "--solution", str(sol_path),
            "--sigma", "0,10", "--trials", "2000"]
    capsys.readouterr()
    assert main(base) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "sigma,trials,successes,yield,ci_lo,ci_hi"
    assert lines[1].startswith("0,2000,2000,1,")
    y1, y2 = tmp_path / "y1.csv", tmp_path / "y2.csv"
    assert main(base + ["--out", str(y1)]) == 0
    assert main(base + ["--out", str(y2)]) == 0
    assert y1.read_bytes() == y2.read_bytes()
    meta = json.loads((tmp_path / "y1.csv.meta.json").read_text())
    assert "created_utc" in meta and meta["argv"][0] == "yield"
    assert "created_utc" not in y1.read_text()


def test_yield_config_overrides_flags(tmp_path, grid22, capsys):
    sol_path = solve22(tmp_path, grid22)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"yield": {"sigma": [3.0], "trials": 500}}))
    capsys.readouterr()
    assert main(["yield", "--topology", str(grid22), "--solution", str(sol_path),
                 "--sigma", "99", "--trials", "9", "--config", str(cfg)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and lines[1].startswith("3,500,")


def test_config_schema_rejected(tmp_path, grid22):
    sol = solve22(tmp_path, grid22)
    bad1 = tmp_path / "bad1.json"
    bad1.write_text(json.dumps({"bogus": {}}))
    assert main(["yield", "--topology", str(grid22), "--solution", str(sol),
                 "--sigma", "5", "--config", str(bad1)]) == 2
    bad2 = tmp_path / "bad2.json"
    bad2.write_text(json.dumps({"yield": {"sugma": 5}}))
    assert main(["yield", "--topology", str(grid22), "--solution", str(sol),
                 "--sigma", "5", "--config", str(bad2)]) == 2


def test_threshold_writes_csv(tmp_path, grid22, capsys):
    sol_path = solve22(tmp_path, grid22)
    capsys.readouterr()
    assert main(["threshold", "--topology", str(grid22), "--solution", str(sol_path),
                 "--target", "0.8", "--bracket", "5:40", "--tol", "0.5",
                 "--trials", "1000", "--max-trials", "16000", "--seed", "5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "target,sigma_star,bracket_lo,bracket_hi,trials,seed"
    target, sigma_star, lo, hi, trials, seed = lines[1].split(",")
    assert float(lo) < float(sigma_star) < float(hi)
    assert (target, trials, seed) == ("0.8", "1000", "5")


def test_threshold_bad_bracket_exit_2(tmp_path, grid22):
    sol_path = solve22(tmp_path, grid22)
    assert main(["threshold", "--topology", str(grid22), "--solution", str(sol_path),
                 "--target", "0.8", "--bracket", "30:40", "--trials", "500",
                 "--max-trials", "2000"]) == 2


# -- assemble ----------------------------------------------------------------------


def test_assemble_clean_exit_0(tmp_path):
    unit_path = tmp_path / "unit.json"
    assert main(["topo", "--kind", "square", "--rows", "3", "--cols", "3",
                 "--out", str(unit_path)]) == 0
    sol_path = write_unit_solution(tmp_path)
    prefix = str(tmp_path / "chip")
    assert main(["assemble", "--unit", str(unit_path), "--solution", str(sol_path),
                 "--bc", "PBC1", "--nx", "2", "--ny", "2", "--sigma", "5",
                 "--trials", "1000", "--out", prefix]) == 0
    asm = ChipAssembly.from_json_dict(json.loads((tmp_path / "chip.chip.json").read_text()))
    assert asm.chip_topology.n_qubits == 36
    report = json.loads((tmp_path / "chip.report.json").read_text())
    assert report["unit_wrap_feasible"] is True
    assert report["check"]["ok"] is True
    yield_lines = (tmp_path / "chip.yield.csv").read_text().strip().splitlines()
    assert len(yield_lines) == 2


def test_assemble_mismatched_bc_exit_4(tmp_path):
    unit_path = tmp_path / "unit.json"
    assert main(["topo", "--kind", "square", "--rows", "3", "--cols", "3",
                 "--out", str(unit_path)]) == 0
    sol_path = write_unit_solution(tmp_path)
    prefix = str(tmp_path / "chip")
    # novel wrap couplers with no direction: usage error
    assert main(["assemble", "--unit", str(unit_path), "--solution", str(sol_path),
                 "--bc", "PBC3", "--nx", "2", "--ny", "2", "--out", prefix]) == 2
    assert main(["assemble", "--unit", str(unit_path), "--solution", str(sol_path),
                 "--bc", "PBC3", "--nx", "2", "--ny", "2",
                 "--fill-orientation", "0", "--out", prefix]) == 4
    report = json.loads((tmp_path / "chip.report.json").read_text())
    assert report["unit_wrap_feasible"] is False
    assert report["check"]["n_violations"] > 0
    assert report["all_violations_on_seams"] is True


def test_assemble_rejects_wrapped_unit(tmp_path):
    wrapped_path = tmp_path / "wrapped.json"
    assert main(["topo", "--kind", "square", "--rows", "3", "--cols", "3",
                 "--bc", "PBC1", "--out", str(wrapped_path)]) == 0
    sol_path = write_unit_solution(tmp_path)
    assert main(["assemble", "--unit", str(wrapped_path), "--solution", str(sol_path),
                 "--bc", "PBC1", "--nx", "2", "--ny", "2",
                 "--out", str(tmp_path / "chip")]) == 2


def test_missing_files_exit_2(tmp_path):
    assert main(["build", "--topology", str(tmp_path / "absent.json"),
                 "--out", str(tmp_path / "m.lp")]) == 2
    assert main(["verify", "--topology", str(tmp_path / "absent.json"),
                 "--solution", str(tmp_path / "also_absent.json")]) == 2
