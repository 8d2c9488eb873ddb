"""Command-line pipelines from topology generation to chip assembly.

Subcommands compose through files only: topo writes a topology JSON,
build turns it into an LP file, solve produces a solution JSON, and
verify / yield / threshold / assemble consume the pair.  Every output is
byte-deterministic for a given config and seed; wall-clock metadata goes
to a sidecar FILE.meta.json, never into the artifact itself.

Exit codes: 0 success, 2 usage or config error, 3 solver failure,
4 infeasible precondition (failed verification or a dirty chip report).

A JSON config file passed with --config overrides command-line flags
section by section; unknown sections or keys are rejected before any
work happens.  The external solver command template may also come from
the FREQALLOC_SOLVER_CMD environment variable.
"""
from __future__ import annotations

import argparse
import datetime
import json
import os
import re
import sys
from dataclasses import dataclass, field, replace

from .assembly import PreconditionError, chip_check, preset_bc, seam_violations, tile
from .constraints import (
    ConstraintParams,
    default_params,
    enumerate_records,
    uniform_tightening,
)
from .model import ModelIR, Solution, SolutionParseError, build, export_lp
from .solve import SolverConfig, SolverFailure, solve_anneal, solve_external, verify
from .topology import BoundaryCondition, Topology, hex_grid, hex_rings, square_grid, wrap
from .yield_mc import (
    CSV_HEADER,
    BracketError,
    csv_row,
    estimate_yield,
    threshold_dispersion,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3
EXIT_INFEASIBLE = 4

SOLVER_CMD_ENV = "FREQALLOC_SOLVER_CMD"

THRESHOLD_CSV_HEADER = "target,sigma_star,bracket_lo,bracket_hi,trials,seed"


class ConfigError(ValueError):
    """A config file or flag combination that fails schema validation."""


# -- run configuration -------------------------------------------------------

_YIELD_KEYS = {"sigma", "trials", "seed", "jobs", "target", "bracket", "tol_mhz", "max_trials"}
_TOPOLOGY_KEYS = {"kind", "rows", "cols", "rings", "cells_x", "cells_y", "bc"}
_MODEL_KEYS = {"mode", "big_m"}
_OUTPUT_KEYS = {"out"}


@dataclass
class RunConfig:
    """Validated contents of a --config file, one section per concern."""

    topology: dict = field(default_factory=dict)
    params: dict | None = None
    model: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    yield_opts: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @staticmethod
    def load(path: str | None) -> "RunConfig":
        if path is None:
            return RunConfig()
        try:
            raw = json.loads(open(path).read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        sections = {"topology", "params", "model", "solver", "yield", "output"}
        unknown = set(raw) - sections
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")

        def section(name: str, allowed: set) -> dict:
            d = raw.get(name, {})
            if not isinstance(d, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            bad = set(d) - allowed
            if bad:
                raise ConfigError(f"unknown keys in config section {name!r}: {sorted(bad)}")
            return d

        params = raw.get("params")
        if params is not None:
            ConstraintParams.from_json_dict(params)  # schema check up front
        solver = raw.get("solver", {})
        if solver:
            SolverConfig.from_json_dict(solver)
        return RunConfig(
            topology=section("topology", _TOPOLOGY_KEYS),
            params=params,
            model=section("model", _MODEL_KEYS),
            solver=solver if isinstance(solver, dict) else {},
            yield_opts=section("yield", _YIELD_KEYS),
            output=section("output", _OUTPUT_KEYS),
        )


# -- small parsers ------------------------------------------------------------

_BUDGET_RE = re.compile(r"^(\d+(?:\.\d+)?)\s*([smh]?)$")


def parse_budget(text: str) -> float:
    """Seconds from '300', '30s', '5m', or '1h'."""
    m = _BUDGET_RE.match(text.strip())
    if not m:
        raise ConfigError(f"cannot parse budget {text!r} (use e.g. 30s, 5m, 1h)")
    value = float(m.group(1)) * {"": 1.0, "s": 1.0, "m": 60.0, "h": 3600.0}[m.group(2)]
    if value <= 0:
        raise ConfigError("budget must be positive")
    return value


def parse_sigmas(text: str) -> list[float]:
    try:
        sigmas = [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"cannot parse sigma list {text!r}") from exc
    if not sigmas:
        raise ConfigError("sigma list is empty")
    return sigmas


def parse_pair(text: str, what: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"{what} must look like LO:HI, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise ConfigError(f"cannot parse {what} {text!r}") from exc


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("freqalloc")
    except Exception:
        return "unknown"


def _write_text(path: str, text: str, argv: list[str]) -> None:
    with open(path, "w") as fh:
        fh.write(text)
    meta = {
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "argv": argv,
        "package": f"freqalloc {_package_version()}",
    }
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_json(path: str, obj: dict, argv: list[str]) -> None:
    _write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n", argv)


def _load_topology(path: str) -> Topology:
    try:
        return Topology.from_json(open(path).read())
    except OSError as exc:
        raise ConfigError(f"cannot read topology {path}: {exc}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path} is not a topology file: {exc}") from exc


def _load_solution(path: str) -> Solution:
    try:
        return Solution.from_json_dict(json.loads(open(path).read()))
    except OSError as exc:
        raise ConfigError(f"cannot read solution {path}: {exc}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path} is not a solution file: {exc}") from exc


def _effective_params(args: argparse.Namespace, cfg: RunConfig) -> ConstraintParams:
    """defaults < --params file < convenience flags < config params block."""
    if cfg.params is not None:
        return ConstraintParams.from_json_dict(cfg.params)
    if getattr(args, "params", None):
        try:
            params = ConstraintParams.from_json_dict(json.loads(open(args.params).read()))
        except OSError as exc:
            raise ConfigError(f"cannot read params {args.params}: {exc}") from exc
    else:
        params = default_params()
    if getattr(args, "eps_tol", None) is not None:
        params = replace(params, eps_tol=uniform_tightening(args.eps_tol))
    if getattr(args, "diff", None) is not None:
        params = replace(params, delta_diff=args.diff)
    if getattr(args, "window", None) is not None:
        params = replace(params, f_window=parse_pair(args.window, "window"))
    return params


def _resolve_bc(value) -> BoundaryCondition:
    if isinstance(value, BoundaryCondition):
        return value
    if isinstance(value, dict):
        return BoundaryCondition.from_json_dict(value)
    return preset_bc(str(value))


def _out_path(args: argparse.Namespace, cfg: RunConfig, required: bool = True) -> str | None:
    out = cfg.output.get("out", getattr(args, "out", None))
    if out is None and required:
        raise ConfigError("no output path: pass --out or set output.out in the config")
    return out


def _fill_isolated(topo: Topology, sol: Solution, params: ConstraintParams) -> Solution:
    """Qubits outside every coupler get parked at the window floor."""
    if sol.status not in ("optimal", "feasible"):
        return sol
    missing = [q for q in range(topo.n_qubits) if q not in sol.frequencies]
    if not missing:
        return sol
    freqs = dict(sol.frequencies)
    freqs.update({q: params.f_window[0] for q in missing})
    return replace(sol, frequencies=freqs)


def _assignment_for(topo: Topology, sol: Solution, params: ConstraintParams):
    if sol.status not in ("optimal", "feasible"):
        raise ConfigError(f"solution status is {sol.status!r}; nothing to analyze")
    return _fill_isolated(topo, sol, params).as_assignment()


def _build_model(topo: Topology, params: ConstraintParams, args, cfg: RunConfig) -> ModelIR:
    mode = cfg.model.get("mode", args.mode)
    if mode not in ("fixed", "free"):
        raise ConfigError(f"mode must be fixed or free, got {mode!r}")
    big_m = cfg.model.get("big_m", getattr(args, "big_m", None))
    records = enumerate_records(topo, mode, params)
    return build(topo, records, params, mode, big_m=big_m)


# -- subcommands --------------------------------------------------------------

def cmd_topo(args, cfg: RunConfig, argv: list[str]) -> int:
    opts = dict(cfg.topology)
    kind = opts.get("kind", args.kind)
    if kind == "square":
        rows = int(opts.get("rows", args.rows or 0))
        cols = int(opts.get("cols", args.cols or 0))
        topo = square_grid(rows, cols)
    elif kind == "hex":
        rings = opts.get("rings", args.rings)
        if rings is not None:
            topo = hex_rings(int(rings))
        else:
            cx = opts.get("cells_x", args.cells_x)
            cy = opts.get("cells_y", args.cells_y)
            if cx is None or cy is None:
                raise ConfigError("hex topology needs --rings or --cells-x/--cells-y")
            topo = hex_grid(int(cx), int(cy))
    else:
        raise ConfigError(f"unknown topology kind {kind!r}")
    bc_value = opts.get("bc", args.bc)
    if bc_value is not None:
        topo = wrap(topo, _resolve_bc(bc_value))
    out = _out_path(args, cfg)
    _write_json(out, topo.to_json_dict(), argv)
    print(f"wrote {out}: {topo.n_qubits} qubits, {len(topo.edges)} couplers")
    return EXIT_OK


def cmd_build(args, cfg: RunConfig, argv: list[str]) -> int:
    topo = _load_topology(args.topology)
    params = _effective_params(args, cfg)
    model = _build_model(topo, params, args, cfg)
    out = _out_path(args, cfg)
    _write_text(out, export_lp(model), argv)
    print(f"wrote {out}: {len(model.variables)} variables, {len(model.rows)} rows, "
          f"{len(model.binaries())} binaries")
    return EXIT_OK


def _solver_config(args, cfg: RunConfig) -> SolverConfig:
    template = args.cmd or os.environ.get(SOLVER_CMD_ENV, "")
    base = {
        "backend": args.backend,
        "command_template": template,
        "time_budget_s": parse_budget(args.budget),
        "seed": args.seed,
    }
    base.update(cfg.solver)
    scfg = SolverConfig.from_json_dict(base)
    if scfg.backend == "external" and not scfg.command_template:
        raise ConfigError(
            f"external backend needs a command template: pass --cmd, set "
            f"solver.command_template in the config, or export {SOLVER_CMD_ENV}"
        )
    return scfg


def cmd_solve(args, cfg: RunConfig, argv: list[str]) -> int:
    topo = _load_topology(args.topology)
    params = _effective_params(args, cfg)
    model = _build_model(topo, params, args, cfg)
    scfg = _solver_config(args, cfg)
    if scfg.backend == "external":
        sol = solve_external(model, scfg)
    else:
        sol = solve_anneal(model.records, params, scfg)
    sol = _fill_isolated(topo, sol, params)
    out = _out_path(args, cfg)
    _write_json(out, sol.to_json_dict(), argv)
    obj = "none" if sol.objective_value is None else f"{sol.objective_value:.6g}"
    print(f"wrote {out}: status {sol.status}, objective {obj}")
    return EXIT_OK


def cmd_verify(args, cfg: RunConfig, argv: list[str]) -> int:
    topo = _load_topology(args.topology)
    params = _effective_params(args, cfg)
    sol = _load_solution(args.solution)
    if sol.status not in ("optimal", "feasible"):
        raise ConfigError(f"solution status is {sol.status!r}; nothing to verify")
    merged = dict(topo.orientation or {})
    merged.update(sol.orientations)
    records = enumerate_records(topo, "free", params)
    report = verify(replace(sol, orientations=merged), records, params,
                    tightened=(args.bounds == "tightened"))
    out = _out_path(args, cfg, required=False)
    if out:
        _write_json(out, report.to_json_dict(), argv)
    if report.ok:
        print(f"OK: {report.n_instances} instances at {args.bounds} bounds, "
              f"min margin {report.min_margin:.6g} MHz")
        return EXIT_OK
    print(f"FAIL: {len(report.violations)} of {report.n_instances} instances violated "
          f"at {args.bounds} bounds (worst margin {report.min_margin:.6g} MHz)")
    return EXIT_INFEASIBLE


def _yield_opts(args, cfg: RunConfig) -> dict:
    merged = {
        "sigma": getattr(args, "sigma", None),
        "trials": args.trials, "seed": args.seed, "jobs": args.jobs,
        "target": getattr(args, "target", None),
        "bracket": getattr(args, "bracket", None),
        "tol_mhz": getattr(args, "tol", None),
        "max_trials": getattr(args, "max_trials", None),
    }
    merged.update(cfg.yield_opts)
    return merged


def cmd_yield(args, cfg: RunConfig, argv: list[str]) -> int:
    topo = _load_topology(args.topology)
    params = _effective_params(args, cfg)
    assignment = _assignment_for(topo, _load_solution(args.solution), params)
    opts = _yield_opts(args, cfg)
    if opts["sigma"] is None:
        raise ConfigError("no dispersion levels: pass --sigma or set yield.sigma")
    sigmas = opts["sigma"] if isinstance(opts["sigma"], list) else parse_sigmas(str(opts["sigma"]))
    lines = [CSV_HEADER]
    for sigma in sigmas:
        est = estimate_yield(assignment, topo, params, sigma=float(sigma),
                             trials=int(opts["trials"]), seed=int(opts["seed"]),
                             n_jobs=int(opts["jobs"]))
        lines.append(csv_row(est))
    text = "\n".join(lines) + "\n"
    out = _out_path(args, cfg, required=False)
    if out:
        _write_text(out, text, argv)
        print(f"wrote {out}: {len(sigmas)} dispersion levels x {opts['trials']} trials")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_threshold(args, cfg: RunConfig, argv: list[str]) -> int:
    topo = _load_topology(args.topology)
    params = _effective_params(args, cfg)
    assignment = _assignment_for(topo, _load_solution(args.solution), params)
    opts = _yield_opts(args, cfg)
    if opts["target"] is None:
        raise ConfigError("no target yield: pass --target or set yield.target")
    bracket = opts["bracket"]
    bracket = tuple(bracket) if isinstance(bracket, (list, tuple)) else parse_pair(str(bracket), "bracket")
    sigma_star = threshold_dispersion(
        assignment, topo, params,
        target_yield=float(opts["target"]), trials=int(opts["trials"]),
        sigma_bracket=(float(bracket[0]), float(bracket[1])),
        tol_mhz=float(opts["tol_mhz"]), seed=int(opts["seed"]),
        max_trials=int(opts["max_trials"]), n_jobs=int(opts["jobs"]),
    )
    row = "%.8g,%.8g,%.6g,%.6g,%d,%d" % (
        float(opts["target"]), sigma_star, bracket[0], bracket[1],
        int(opts["trials"]), int(opts["seed"]),
    )
    text = THRESHOLD_CSV_HEADER + "\n" + row + "\n"
    out = _out_path(args, cfg, required=False)
    if out:
        _write_text(out, text, argv)
        print(f"wrote {out}: threshold dispersion {sigma_star:.6g} MHz")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_assemble(args, cfg: RunConfig, argv: list[str]) -> int:
    unit = _load_topology(args.unit)
    if unit.wrap_tags:
        raise ConfigError("pass the unwrapped unit topology; tiling applies the wrap itself")
    params = _effective_params(args, cfg)
    sol = _load_solution(args.solution)
    bc = _resolve_bc(cfg.topology.get("bc", args.bc))
    fill = args.fill_orientation

    try:
        tile(unit, sol, bc, args.nx, args.ny, params, fill_orientation=fill)
        unit_feasible = True
    except PreconditionError:
        unit_feasible = False
    asm = tile(unit, sol, bc, args.nx, args.ny, params,
               require_feasible=False, fill_orientation=fill)
    report = chip_check(asm, params)
    on_seams = seam_violations(asm, report)

    prefix = _out_path(args, cfg)
    _write_json(prefix + ".chip.json", asm.to_json_dict(), argv)
    _write_json(prefix + ".report.json", {
        "unit_wrap_feasible": unit_feasible,
        "check": report.to_json_dict(),
        "seam_violations": [v.to_json_dict() for v in on_seams],
        "all_violations_on_seams": len(on_seams) == len(report.violations),
    }, argv)

    opts = _yield_opts(args, cfg)
    if opts["sigma"] is not None:
        sigmas = opts["sigma"] if isinstance(opts["sigma"], list) else parse_sigmas(str(opts["sigma"]))
        lines = [CSV_HEADER]
        for sigma in sigmas:
            est = estimate_yield(asm.chip_assignment, asm.chip_topology, params,
                                 sigma=float(sigma), trials=int(opts["trials"]),
                                 seed=int(opts["seed"]), n_jobs=int(opts["jobs"]))
            lines.append(csv_row(est))
        _write_text(prefix + ".yield.csv", "\n".join(lines) + "\n", argv)

    big_rows = asm.unit_geometry[0] * asm.reps[1]
    big_cols = asm.unit_geometry[1] * asm.reps[0]
    print(f"wrote {prefix}.chip.json: {big_rows}x{big_cols} chip "
          f"({asm.chip_topology.n_qubits} qubits, {len(asm.seam_edges)} seam couplers), "
          f"{len(report.violations)} violations")
    if report.ok and unit_feasible:
        return EXIT_OK
    return EXIT_INFEASIBLE


# -- argument parsing ----------------------------------------------------------

def _add_params_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--params", help="constraint parameter JSON file")
    p.add_argument("--eps-tol", type=float, dest="eps_tol",
                   help="uniform constraint tightening in MHz")
    p.add_argument("--diff", type=float,
                   help="edgewise detuning-gap separation delta_diff in MHz")
    p.add_argument("--window", help="frequency window LO:HI in MHz")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("fixed", "free"), default="free")
    p.add_argument("--big-m", type=float, dest="big_m", help="disjunction constant override")


def _add_analysis_flags(p: argparse.ArgumentParser, trials_default: int) -> None:
    p.add_argument("--trials", type=int, default=trials_default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for trials")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="freqalloc",
        description="Collision-aware frequency assignment for qubit lattices",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topo", help="generate a topology file")
    p.add_argument("--kind", choices=("square", "hex"), default="square")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--rings", type=int, help="hex: concentric cell rings")
    p.add_argument("--cells-x", type=int, dest="cells_x", help="hex: cell columns")
    p.add_argument("--cells-y", type=int, dest="cells_y", help="hex: cell rows")
    p.add_argument("--bc", help="wrap a square grid with this boundary condition preset")
    p.add_argument("--out")
    p.set_defaults(func=cmd_topo)

    p = sub.add_parser("build", help="export the MILP as an LP file")
    p.add_argument("--topology", required=True)
    _add_model_flags(p)
    _add_params_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("solve", help="solve the model and write a solution file")
    p.add_argument("--topology", required=True)
    _add_model_flags(p)
    _add_params_flags(p)
    p.add_argument("--backend", choices=("external", "anneal"), default="external")
    p.add_argument("--cmd", help="external wrapper template with {lp} {out} [{budget}]")
    p.add_argument("--budget", default="60s", help="time budget, e.g. 30s / 5m / 1h")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="re-check a solution constraint by constraint")
    p.add_argument("--topology", required=True)
    p.add_argument("--solution", required=True)
    _add_params_flags(p)
    p.add_argument("--bounds", choices=("tightened", "base"), default="tightened")
    p.add_argument("--out", help="optional violation report JSON")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("yield", help="Monte Carlo yield under fabrication dispersion")
    p.add_argument("--topology", required=True)
    p.add_argument("--solution", required=True)
    _add_params_flags(p)
    p.add_argument("--sigma", help="comma-separated dispersion levels in MHz")
    _add_analysis_flags(p, trials_default=10_000)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_yield)

    p = sub.add_parser("threshold", help="dispersion level where yield crosses a target")
    p.add_argument("--topology", required=True)
    p.add_argument("--solution", required=True)
    _add_params_flags(p)
    p.add_argument("--target", type=float, help="target yield fraction in (0,1)")
    p.add_argument("--bracket", default="0.5:60", help="sigma search bracket LO:HI in MHz")
    p.add_argument("--tol", type=float, default=0.1, help="bisection tolerance in MHz")
    p.add_argument("--max-trials", type=int, dest="max_trials", default=400_000)
    _add_analysis_flags(p, trials_default=10_000)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("assemble", help="tile a unit solution into a chip and recheck it")
    p.add_argument("--unit", required=True, help="unwrapped unit topology JSON")
    p.add_argument("--solution", required=True, help="solution solved on the wrapped unit")
    p.add_argument("--bc", default="PBC1")
    p.add_argument("--nx", type=int, required=True)
    p.add_argument("--ny", type=int, required=True)
    p.add_argument("--fill-orientation", type=int, choices=(0, 1), dest="fill_orientation",
                   help="direction for wrap couplers the solution never oriented")
    _add_params_flags(p)
    p.add_argument("--sigma", help="optional dispersion levels for whole-chip yield")
    _add_analysis_flags(p, trials_default=10_000)
    p.add_argument("--out", required=True, help="output prefix for .chip.json/.report.json")
    p.set_defaults(func=cmd_assemble)

    for sp in sub.choices.values():
        sp.add_argument("--config", help="JSON config overriding these flags")
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        return args.func(args, cfg, argv)
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SolutionParseError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, BracketError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
