"""Solution backends and independent verification.

Two ways to obtain a Solution: hand the exported LP file to an external
MILP solver through a subprocess wrapper, or run the built-in simulated
annealing fallback for desk-scale instances.  Either way, verify() is the
single source of truth for feasibility: it re-evaluates every constraint
record literally, with exact absolute values and no big-M encoding.
"""
from __future__ import annotations

import math
import random
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .constraints import (
    BOUNDED_FAMILIES,
    ConstraintParams,
    ConstraintRecord,
    Violation,
    ViolationReport,
    record_margin,
)
from .model import ModelIR, Solution, export_lp, import_solution
from .topology import Edge


class SolverFailure(RuntimeError):
    """The external solver did not produce a usable solution file."""


DEFAULT_ANNEAL = {
    "init_temp": 50.0,
    "cooling_rate": 0.99,
    "moves_per_temp": 100,
    "freq_step_mhz": 5.0,
}
_FINAL_TEMP = 1e-3


@dataclass
class SolverConfig:
    """How to obtain solutions.

    backend "external" shells out to command_template, a string with {lp}
    and {out} placeholders (an optional {budget} placeholder receives
    time_budget in seconds).  backend "anneal" runs the built-in local
    search; its schedule is fixed by the anneal settings, so results are a
    deterministic function of the seed, and time_budget is not consulted.
    """

    backend: str = "external"
    command_template: str = ""
    time_budget: float = 60.0
    seed: int = 0
    anneal: dict = field(default_factory=lambda: dict(DEFAULT_ANNEAL))

    def __post_init__(self) -> None:
        if self.backend not in ("external", "anneal"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not self.time_budget > 0:
            raise ValueError("time_budget must be > 0")
        merged = dict(DEFAULT_ANNEAL)
        for key, val in self.anneal.items():
            if key not in DEFAULT_ANNEAL:
                raise ValueError(f"unknown anneal setting {key!r}")
            merged[key] = val
        self.anneal = merged
        if not 0.0 < self.anneal["cooling_rate"] < 1.0:
            raise ValueError("cooling_rate must be in (0, 1)")
        if self.anneal["init_temp"] <= 0:
            raise ValueError("init_temp must be > 0")
        if int(self.anneal["moves_per_temp"]) < 1:
            raise ValueError("moves_per_temp must be >= 1")
        if self.anneal["freq_step_mhz"] <= 0:
            raise ValueError("freq_step_mhz must be > 0")

    def to_json_dict(self) -> dict:
        return {
            "backend": self.backend,
            "command_template": self.command_template,
            "time_budget_s": self.time_budget,
            "seed": self.seed,
            "anneal": dict(self.anneal),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "SolverConfig":
        known = {"backend", "command_template", "time_budget_s", "seed", "anneal"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown solver config keys {sorted(unknown)}")
        return SolverConfig(
            backend=d.get("backend", "external"),
            command_template=d.get("command_template", ""),
            time_budget=float(d.get("time_budget_s", 60.0)),
            seed=int(d.get("seed", 0)),
            anneal=dict(d.get("anneal", {})),
        )


def solve_external(model: ModelIR, cfg: SolverConfig) -> Solution:
    """Write the LP, run the wrapper command, parse its solution file.

    The wrapper is invoked as the shell-split command_template with {lp}
    and {out} substituted (and {budget} if present).  Temp files live in a
    private directory under the usual TMPDIR rules.  A wrapper that exits
    nonzero but still writes a solution file is trusted (solvers often exit
    nonzero on infeasible models); no file means SolverFailure.  If the
    subprocess outlives time_budget by a grace period it is killed and
    whatever solution file exists is used, else status is timeout.
    """
    if cfg.backend != "external":
        raise ValueError("solve_external needs backend 'external'")
    if "{lp}" not in cfg.command_template or "{out}" not in cfg.command_template:
        raise ValueError("command template must contain {lp} and {out}")

    with tempfile.TemporaryDirectory(prefix="freqalloc-") as tmp:
        lp_path = Path(tmp) / "model.lp"
        out_path = Path(tmp) / "solution.json"
        lp_path.write_text(export_lp(model), encoding="utf-8")
        tokens = [
            tok.replace("{lp}", str(lp_path))
            .replace("{out}", str(out_path))
            .replace("{budget}", format(cfg.time_budget, ".6g"))
            for tok in shlex.split(cfg.command_template)
        ]
        timed_out = False
        try:
            proc = subprocess.run(
                tokens,
                capture_output=True,
                text=True,
                timeout=cfg.time_budget + 10.0,
            )
        except FileNotFoundError as exc:
            raise SolverFailure(f"solver command not found: {tokens[0]}") from exc
        except subprocess.TimeoutExpired:
            timed_out = True

        if not out_path.exists():
            if timed_out:
                return Solution(status="timeout")
            tail = (proc.stderr or proc.stdout or "").strip()[-500:]
            raise SolverFailure(
                f"solver exited {proc.returncode} without a solution file: {tail}"
            )
        return import_solution(out_path.read_text(encoding="utf-8"), model)


# -- independent verification ---------------------------------------------------


def _active_records(
    records: list[ConstraintRecord], orientations: dict[Edge, int]
) -> list[ConstraintRecord]:
    active = []
    for rec in records:
        if rec.orientation_case is None:
            active.append(rec)
            continue
        if rec.gate_pair not in orientations:
            raise ValueError(f"solution lacks an orientation for coupler {rec.gate_pair}")
        if orientations[rec.gate_pair] == rec.orientation_case:
            active.append(rec)
    return active


def verify(
    solution: Solution,
    records: list[ConstraintRecord],
    params: ConstraintParams,
    tightened: bool,
    tol: float = 1e-6,
) -> ViolationReport:
    """Evaluate every active record literally against the solution.

    Directed records count only when the solution's orientation selects
    them.  tightened=True checks the optimization-time bounds (base + eps,
    C1 window shrunk, DIFF at delta_diff); False checks the physical base
    bounds.  MILP solvers satisfy constraints only to their feasibility
    tolerance, so an instance counts as violated when its margin drops
    below -tol; pass tol=0 for the strict reading.

    Raises:
        ValueError: a participant frequency or coupler orientation missing.
    """
    freqs = solution.frequencies
    active = _active_records(records, solution.orientations)
    for rec in active:
        for q in rec.participants:
            if q not in freqs:
                raise ValueError(f"solution lacks a frequency for qubit {q}")
    violations = []
    min_margin = float("inf")
    for rec in active:
        measured, bound, margin = record_margin(rec, freqs, params, tightened)
        min_margin = min(min_margin, margin)
        if margin < -tol:
            violations.append(Violation(rec.family, rec.participants, measured, bound, margin))
    return ViolationReport(
        n_instances=len(active), violations=violations, min_margin=min_margin
    )


# -- simulated annealing fallback ------------------------------------------------


def _snap(value: float, lo: float, hi: float, step: float) -> float:
    snapped = lo + round((value - lo) / step) * step
    return min(hi, max(lo, snapped))


class _AnnealState:
    """Current assignment plus per-record margins, updated incrementally."""

    def __init__(
        self,
        records: list[ConstraintRecord],
        params: ConstraintParams,
        rng: random.Random,
        step: float,
    ):
        self.records = records
        self.params = params
        qubits = sorted({q for rec in records for q in rec.participants})
        self.qubits = qubits
        lo, hi = params.f_window
        self.window = (lo, hi)
        self.step = step
        self.freqs = {q: _snap(rng.uniform(lo, hi), lo, hi, step) for q in qubits}

        cases: dict[Edge, set[int]] = {}
        for rec in records:
            if rec.orientation_case is not None:
                cases.setdefault(rec.gate_pair, set()).add(rec.orientation_case)
        self.orient: dict[Edge, int] = {}
        self.flippable: list[Edge] = []
        for pair in sorted(cases):
            options = cases[pair]
            if len(options) == 2:
                self.orient[pair] = rng.randint(0, 1)
                self.flippable.append(pair)
            else:
                self.orient[pair] = next(iter(options))

        self.by_qubit: dict[int, list[int]] = {q: [] for q in qubits}
        self.by_pair: dict[Edge, list[int]] = {}
        for i, rec in enumerate(records):
            for q in set(rec.participants):
                self.by_qubit[q].append(i)
            if rec.orientation_case is not None:
                self.by_pair.setdefault(rec.gate_pair, []).append(i)

        self.margins = [0.0] * len(records)
        self.viol_sum = 0.0
        for i in range(len(records)):
            self.margins[i] = self._margin(i)
            if self.margins[i] < 0:
                self.viol_sum += -self.margins[i]

    def _margin(self, i: int) -> float:
        rec = self.records[i]
        if rec.orientation_case is not None and self.orient[rec.gate_pair] != rec.orientation_case:
            return float("inf")  # inactive records never contribute
        return record_margin(rec, self.freqs, self.params, tightened=True)[2]

    def energy(self) -> float:
        if self.viol_sum > 0:
            return self.viol_sum
        finite = [m for m in self.margins if m != float("inf")]
        if not finite:
            return 0.0
        return -1e-3 * min(finite)

    def reevaluate(self, indexes: set[int]) -> None:
        for i in indexes:
            old = self.margins[i]
            new = self._margin(i)
            if old < 0:
                self.viol_sum -= -old
            if new < 0:
                self.viol_sum += -new
            self.margins[i] = new
        # incremental float drift must never fake (in)feasibility near zero
        if self.viol_sum < 1e-9:
            self.viol_sum = sum(-m for m in self.margins if m < 0)

    def touched_by_qubits(self, qs) -> set[int]:
        out: set[int] = set()
        for q in qs:
            out.update(self.by_qubit[q])
        return out


def solve_anneal(
    records: list[ConstraintRecord],
    params: ConstraintParams,
    cfg: SolverConfig,
) -> Solution:
    """Simulated annealing over grid frequencies and orientation bits.

    Energy is the total violation magnitude at tightened bounds; once that
    reaches zero a small reward proportional to the minimum margin keeps
    pushing instances apart.  Moves are single-qubit Gaussian frequency
    jumps (snapped to the freq_step grid), orientation flips for couplers
    whose records carry both cases, and frequency swaps between two qubits,
    accepted by the Metropolis rule under a geometric temperature schedule.
    The schedule is fixed by the config, so the result is a deterministic
    function of the seed; status is "feasible" only when the best state has
    zero violations, "timeout" otherwise (the search proves nothing about
    infeasibility).
    """
    if cfg.backend != "anneal":
        raise ValueError("solve_anneal needs backend 'anneal'")
    rng = random.Random(cfg.seed)
    step = float(cfg.anneal["freq_step_mhz"])
    lo, hi = params.f_window

    if not records:
        return Solution(status="feasible", frequencies={}, orientations={}, slacks={},
                        objective_value=0.0)

    state = _AnnealState(records, params, rng, step)
    if not state.qubits:
        return Solution(status="feasible", frequencies={}, orientations={}, slacks={},
                        objective_value=0.0)

    energy = state.energy()
    best_energy = energy
    best_freqs = dict(state.freqs)
    best_orient = dict(state.orient)

    temp = float(cfg.anneal["init_temp"])
    cooling = float(cfg.anneal["cooling_rate"])
    per_level = int(cfg.anneal["moves_per_temp"])

    while temp > _FINAL_TEMP:
        for _ in range(per_level):
            kind = rng.random()
            if kind < 0.7 or (len(state.qubits) < 2 and not state.flippable):
                q = rng.choice(state.qubits)
                old = state.freqs[q]
                new = _snap(old + rng.gauss(0.0, step), lo, hi, step)
                if new == old:
                    continue
                touched = state.touched_by_qubits([q])
                state.freqs[q] = new
                undo = lambda: state.freqs.__setitem__(q, old)
            elif kind < 0.85 and state.flippable:
                pair = rng.choice(state.flippable)
                touched = set(state.by_pair[pair])
                state.orient[pair] = 1 - state.orient[pair]
                undo = lambda: state.orient.__setitem__(pair, 1 - state.orient[pair])
            elif len(state.qubits) >= 2:
                qa, qb = rng.sample(state.qubits, 2)
                fa, fb = state.freqs[qa], state.freqs[qb]
                if fa == fb:
                    continue
                touched = state.touched_by_qubits([qa, qb])
                state.freqs[qa], state.freqs[qb] = fb, fa
                undo = lambda: state.freqs.update({qa: fa, qb: fb})
            else:
                continue

            before = [(i, state.margins[i]) for i in touched]
            viol_before = state.viol_sum
            state.reevaluate(touched)
            new_energy = state.energy()
            delta = new_energy - energy
            if delta <= 0 or rng.random() < math.exp(-delta / temp):
                energy = new_energy
                if energy < best_energy:
                    best_energy = energy
                    best_freqs = dict(state.freqs)
                    best_orient = dict(state.orient)
            else:
                undo()
                for i, m in before:
                    state.margins[i] = m
                state.viol_sum = viol_before
        temp *= cooling

    sol_freqs = best_freqs
    sol_orient = best_orient
    active = _active_records(records, sol_orient)
    feasible = True
    fam_min: dict[str, float] = {}
    for rec in active:
        measured, _, margin = record_margin(rec, sol_freqs, params, tightened=True)
        if margin < 0:
            feasible = False
        if rec.family in BOUNDED_FAMILIES:
            fam_min[rec.family] = min(fam_min.get(rec.family, float("inf")), measured)
    slacks = dict(sorted(fam_min.items()))
    objective = sum(v - params.base_bound(f) for f, v in slacks.items()) if feasible else None
    return Solution(
        status="feasible" if feasible else "timeout",
        frequencies=sol_freqs,
        orientations=sol_orient,
        slacks=slacks,
        objective_value=objective,
    )
