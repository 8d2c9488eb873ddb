"""MILP construction for collision-free frequency assignment.

The model maximizes the sum of per-family slack variables.  Every bounded
family F present in the records gets one slack sF, lower-bounded by its
tightened bound and upper-bounded by the largest value its expression can
take inside the frequency window.  Each absolute-value instance |expr| >= sF
turns into the disjunction

    expr + M*b >= sF        and        -expr + M*(1-b) >= sF

with a fresh binary b; the inactive branch must stay satisfiable for every
in-window point, which is why the default big M is twice the largest
attainable expression magnitude (the T1 family reaches 2*window + |alpha|)
plus margin.  In free-orientation mode each directed instance additionally
carries a gate term M*o or M*(1-o) on its coupler's orientation bit, so only
the realized direction binds.  C1 is a pair of plain window rows (no slack),
and DIFF links auxiliary gap variables d_e = |f_p - f_q| via four big-M rows
per coupler plus one disjunction (or two proximity rows) per coupler pair.

Variable naming is part of the file contract: f_<q> frequencies, s<FAM>
slacks, o_<a>_<b> orientation bits, d_<p>_<q> detuning gaps, b_<k> all other
binaries, numbered in emission order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .constraints import (
    BOUNDED_FAMILIES,
    ConstraintParams,
    ConstraintRecord,
    FrequencyAssignment,
)
from .topology import Edge, Topology, edge_key


class SolutionParseError(ValueError):
    """Solver output that does not meet the solution-file contract."""


class IntegralityError(SolutionParseError):
    """A binary variable came back materially non-integral."""


@dataclass
class VarDef:
    name: str
    lb: float
    ub: float
    kind: str  # 'C' continuous, 'B' binary


@dataclass
class RowDef:
    name: str
    coeffs: dict[str, float]
    sense: str  # '>=', '<=', '='
    rhs: float


@dataclass
class Solution:
    """A solved assignment plus the slack values that priced it."""

    status: str  # optimal | feasible | infeasible | timeout
    frequencies: dict[int, float] = field(default_factory=dict)
    orientations: dict[Edge, int] = field(default_factory=dict)
    slacks: dict[str, float] = field(default_factory=dict)
    objective_value: float | None = None

    def as_assignment(self) -> FrequencyAssignment:
        return FrequencyAssignment(
            frequencies=dict(self.frequencies),
            orientations=dict(self.orientations),
        )

    def to_json_dict(self) -> dict:
        return {
            "status": self.status,
            "frequencies_mhz": {str(q): f for q, f in sorted(self.frequencies.items())},
            "orientations": {edge_key(*e): bit for e, bit in sorted(self.orientations.items())},
            "slacks_mhz": dict(sorted(self.slacks.items())),
            "objective_mhz": self.objective_value,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "Solution":
        from .topology import parse_edge_key

        return Solution(
            status=str(d["status"]),
            frequencies={int(q): float(f) for q, f in d.get("frequencies_mhz", {}).items()},
            orientations={parse_edge_key(k): int(v) for k, v in d.get("orientations", {}).items()},
            slacks={str(k): float(v) for k, v in d.get("slacks_mhz", {}).items()},
            objective_value=None if d.get("objective_mhz") is None else float(d["objective_mhz"]),
        )


@dataclass
class ModelIR:
    """Solver-agnostic model: variables, linear rows, maximize objective."""

    mode: str
    n_qubits: int
    variables: list[VarDef]
    rows: list[RowDef]
    objective: dict[str, float]
    big_m: float
    records: list[ConstraintRecord]
    slack_vars: dict[str, str]          # family -> variable name
    slack_base: dict[str, float]        # family -> base bound (objective offset)
    orientation_vars: dict[Edge, str]   # free mode
    orientation_fixed: dict[Edge, int]  # fixed mode

    def var_names(self) -> list[str]:
        return [v.name for v in self.variables]

    def binaries(self) -> list[str]:
        return [v.name for v in self.variables if v.kind == "B"]


def default_big_m(params: ConstraintParams) -> float:
    """Safe default: twice the largest expression magnitude plus margin."""
    return 2.0 * (2.0 * params.window_width + abs(params.alpha)) + 100.0


def linearize_abs_geq(
    name: str,
    expr: dict[str, float],
    const: float,
    slack: str | None,
    bound: float,
    big_m: float,
    binary: str,
    gate: tuple[str, int] | None = None,
) -> list[RowDef]:
    """Two rows enforcing |expr + const| >= slack (or >= bound).

    gate = (orientation var, case): case 0 relaxes both rows by M*o, case 1
    by M*(1-o), so the disjunction only binds when the coupler points the
    record's way.
    """
    pos = dict(expr)
    neg = {v: -c for v, c in expr.items()}
    rhs_pos = -const
    rhs_neg = const - big_m
    pos[binary] = big_m
    neg[binary] = -big_m
    if slack is not None:
        pos[slack] = pos.get(slack, 0.0) - 1.0
        neg[slack] = neg.get(slack, 0.0) - 1.0
    else:
        rhs_pos += bound
        rhs_neg += bound
    if gate is not None:
        ovar, case = gate
        if case == 0:
            pos[ovar] = pos.get(ovar, 0.0) + big_m
            neg[ovar] = neg.get(ovar, 0.0) + big_m
        else:
            pos[ovar] = pos.get(ovar, 0.0) - big_m
            neg[ovar] = neg.get(ovar, 0.0) - big_m
            rhs_pos -= big_m
            rhs_neg -= big_m
    return [
        RowDef(name + "_p", pos, ">=", rhs_pos),
        RowDef(name + "_n", neg, ">=", rhs_neg),
    ]


def _abs_expression(rec: ConstraintRecord, alpha: float) -> tuple[dict[str, float], float]:
    """Signed linear expression whose absolute value the record bounds."""
    p = rec.participants
    fam = rec.family

    def f(q: int) -> str:
        return f"f_{q}"

    expr: dict[str, float] = {}

    def add(q: int, c: float) -> None:
        expr[f(q)] = expr.get(f(q), 0.0) + c

    if fam in ("A1", "A2"):
        add(p[0], 1.0)
        add(p[1], -1.0)
        const = 0.0 if fam == "A1" else -alpha
    elif fam in ("E1", "E2", "D1"):
        add(p[1], 1.0)
        add(p[0], -1.0)
        const = {"E1": 0.0, "E2": -alpha, "D1": -alpha / 2.0}[fam]
    elif fam in ("S1", "S2"):
        add(p[1], 1.0)
        add(p[2], -1.0)
        const = 0.0 if fam == "S1" else -alpha
    elif fam == "T1":
        add(p[1], 1.0)
        add(p[2], 1.0)
        add(p[0], -2.0)
        const = -alpha
    else:
        raise ValueError(f"{fam} is not an absolute-value family")
    return expr, const


def build(
    topo: Topology,
    records: list[ConstraintRecord],
    params: ConstraintParams,
    mode: str,
    big_m: float | None = None,
) -> ModelIR:
    """Assemble the MILP for the given record list.

    Args:
        topo: coupler graph (provides the qubit count and, in fixed mode,
            the orientation used to reconstruct solutions).
        records: output of enumerate_records(topo, mode, params).
        params: bounds, tightenings, window, and DIFF settings.
        mode: "fixed" or "free"; must match how records were enumerated.
        big_m: optional override; validated against window + |alpha| + the
            largest base bound.

    Raises:
        ValueError: empty records for a coupled topology, mode mismatch with
            the records, or an invalid big_m.
    """
    if mode not in ("fixed", "free"):
        raise ValueError(f"mode must be 'fixed' or 'free', got {mode!r}")
    if not records and topo.edges:
        raise ValueError("empty record list for a topology with couplers")
    if mode == "fixed" and topo.edges and topo.orientation is None:
        raise ValueError("fixed mode requires topo.orientation")
    if mode == "fixed" and any(r.family != "DIFF" and r.orientation_case is not None
                               and topo.orientation.get(r.gate_pair) != r.orientation_case
                               for r in records):
        raise ValueError("records carry orientation cases not matching the fixed orientation")

    lo, hi = params.f_window
    min_big_m = params.window_width + abs(params.alpha) + max(
        [params.base_bounds.get(f, 0.0) for f in BOUNDED_FAMILIES], default=0.0
    )
    M = default_big_m(params) if big_m is None else float(big_m)
    if M < min_big_m:
        raise ValueError(f"big_m {M} below the safe floor {min_big_m}")

    fams_present = sorted(
        {r.family for r in records if r.family in BOUNDED_FAMILIES},
        key=BOUNDED_FAMILIES.index,
    )
    slack_vars = {fam: f"s{fam}" for fam in fams_present}
    slack_base = {fam: params.base_bound(fam) for fam in fams_present}

    orientation_vars: dict[Edge, str] = {}
    if mode == "free":
        seen = set()
        for pair in topo.edges:
            if pair not in seen:
                seen.add(pair)
                orientation_vars[pair] = f"o_{pair[0]}_{pair[1]}"

    rows: list[RowDef] = []
    binaries: list[str] = []
    d_vars: dict[Edge, str] = {}
    fam_counter: dict[str, int] = {}

    def next_binary() -> str:
        name = f"b_{len(binaries)}"
        binaries.append(name)
        return name

    def row_index(fam: str) -> int:
        fam_counter[fam] = fam_counter.get(fam, 0) + 1
        return fam_counter[fam] - 1

    def gate_for(rec: ConstraintRecord) -> tuple[str, int] | None:
        if mode != "free" or rec.orientation_case is None:
            return None
        return (orientation_vars[rec.gate_pair], rec.orientation_case)

    def ensure_gap_var(pair: Edge) -> str:
        if pair in d_vars:
            return d_vars[pair]
        name = f"d_{pair[0]}_{pair[1]}"
        d_vars[pair] = name
        p, q = pair
        b = next_binary()
        fp, fq = f"f_{p}", f"f_{q}"
        tag = f"dabs_{p}_{q}"
        rows.extend([
            RowDef(tag + "_1", {name: 1.0, fp: -1.0, fq: 1.0}, ">=", 0.0),
            RowDef(tag + "_2", {name: 1.0, fp: 1.0, fq: -1.0}, ">=", 0.0),
            RowDef(tag + "_3", {name: 1.0, fp: -1.0, fq: 1.0, b: -M}, "<=", 0.0),
            RowDef(tag + "_4", {name: 1.0, fp: 1.0, fq: -1.0, b: M}, "<=", M),
        ])
        return name

    for rec in records:
        fam = rec.family
        if fam == "C1":
            ctrl, tgt = rec.participants
            eps = params.tightening("C1")
            i = row_index("C1")
            hi_coeffs = {f"f_{tgt}": 1.0, f"f_{ctrl}": -1.0}
            lo_coeffs = {f"f_{tgt}": 1.0, f"f_{ctrl}": -1.0}
            rhs_hi = -eps
            rhs_lo = params.alpha + eps
            gate = gate_for(rec)
            if gate is not None:
                ovar, case = gate
                sign = 1.0 if case == 0 else -1.0
                hi_coeffs[ovar] = -M * sign
                lo_coeffs[ovar] = M * sign
                if case == 1:
                    rhs_hi += M
                    rhs_lo -= M
            rows.append(RowDef(f"C1_{i}_hi", hi_coeffs, "<=", rhs_hi))
            rows.append(RowDef(f"C1_{i}_lo", lo_coeffs, ">=", rhs_lo))
        elif fam == "DIFF":
            e_k = topo.edges[rec.edge_indexes[0]]
            e_l = topo.edges[rec.edge_indexes[1]]
            dk = ensure_gap_var(e_k)
            dl = ensure_gap_var(e_l)
            i = row_index("DIFF")
            delta = params.delta_diff
            if params.diff_separation:
                b = next_binary()
                rows.append(RowDef(f"DIFF_{i}_p", {dk: 1.0, dl: -1.0, b: M}, ">=", delta))
                rows.append(RowDef(f"DIFF_{i}_n", {dl: 1.0, dk: -1.0, b: -M}, ">=", delta - M))
            else:
                rows.append(RowDef(f"DIFF_{i}_hi", {dk: 1.0, dl: -1.0}, "<=", delta))
                rows.append(RowDef(f"DIFF_{i}_lo", {dl: 1.0, dk: -1.0}, "<=", delta))
        else:
            expr, const = _abs_expression(rec, params.alpha)
            rows.extend(
                linearize_abs_geq(
                    f"{fam}_{row_index(fam)}",
                    expr,
                    const,
                    slack_vars[fam],
                    0.0,
                    M,
                    next_binary(),
                    gate_for(rec),
                )
            )

    variables: list[VarDef] = [VarDef(f"f_{q}", lo, hi, "C") for q in range(topo.n_qubits)]
    for fam in fams_present:
        variables.append(
            VarDef(slack_vars[fam], params.tightened_bound(fam), params.max_measure(fam), "C")
        )
    for pair in orientation_vars:
        variables.append(VarDef(orientation_vars[pair], 0.0, 1.0, "B"))
    for pair, name in d_vars.items():
        variables.append(VarDef(name, 0.0, params.window_width, "C"))
    for name in binaries:
        variables.append(VarDef(name, 0.0, 1.0, "B"))

    return ModelIR(
        mode=mode,
        n_qubits=topo.n_qubits,
        variables=variables,
        rows=rows,
        objective={slack_vars[fam]: 1.0 for fam in fams_present},
        big_m=M,
        records=list(records),
        slack_vars=slack_vars,
        slack_base=slack_base,
        orientation_vars=orientation_vars,
        orientation_fixed=dict(topo.orientation or {}) if mode == "fixed" else {},
    )


# -- LP export ----------------------------------------------------------------


def _num(x: float) -> str:
    return format(x + 0.0 if x else 0.0, ".12g")


def _terms(coeffs: dict[str, float]) -> str:
    parts: list[str] = []
    for var, c in coeffs.items():
        if c == 0:
            continue
        mag = abs(c)
        body = var if mag == 1 else f"{_num(mag)} {var}"
        if not parts:
            parts.append(body if c > 0 else f"- {body}")
        else:
            parts.append(f"+ {body}" if c > 0 else f"- {body}")
    return " ".join(parts) if parts else "0 " + next(iter(coeffs), "")


def export_lp(model: ModelIR) -> str:
    """Serialize the model in the CPLEX-LP dialect subset.

    Sections: Maximize / Subject To / Bounds / Binary / End.  Output is a
    pure function of the model, so repeated exports are byte-identical.
    """
    out: list[str] = ["\\ frequency assignment model", "Maximize"]
    obj = " + ".join(name for name, c in model.objective.items() if c == 1.0)
    extra = {n: c for n, c in model.objective.items() if c != 1.0}
    if extra:
        tail = _terms(extra)
        obj = f"{obj} {tail}" if obj else tail
    out.append(f" obj: {obj}".rstrip())
    out.append("Subject To")
    for row in model.rows:
        sense = {">=": ">=", "<=": "<=", "=": "="}[row.sense]
        out.append(f" {row.name}: {_terms(row.coeffs)} {sense} {_num(row.rhs)}")
    out.append("Bounds")
    for v in model.variables:
        if v.kind == "B":
            continue
        out.append(f" {_num(v.lb)} <= {v.name} <= {_num(v.ub)}")
    binaries = [v.name for v in model.variables if v.kind == "B"]
    if binaries:
        out.append("Binary")
        for name in binaries:
            out.append(f" {name}")
    out.append("End")
    return "\n".join(out) + "\n"


# -- solution import -----------------------------------------------------------


VALID_STATUSES = ("optimal", "feasible", "infeasible", "timeout")


def import_solution(text: str, model: ModelIR) -> Solution:
    """Parse a solver wrapper's JSON output against the model.

    The wrapper contract is {"status": <optimal|feasible|infeasible|timeout>,
    "values": {variable name: number}}.  For solved statuses every model
    variable must be present and binaries must sit within 1e-6 of an
    integer; orientation bits are read from o_* variables in free mode and
    from the model's fixed orientation otherwise.

    Raises:
        SolutionParseError: malformed JSON, unknown status, missing variables.
        IntegralityError: a binary farther than 1e-6 from {0, 1}.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SolutionParseError(f"solution is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "status" not in doc:
        raise SolutionParseError("solution JSON must be an object with a 'status' key")
    status = doc["status"]
    if status not in VALID_STATUSES:
        raise SolutionParseError(f"unknown status {status!r}")
    if status in ("infeasible", "timeout") and not doc.get("values"):
        return Solution(status=status)

    values = doc.get("values")
    if not isinstance(values, dict):
        raise SolutionParseError("'values' must be an object of variable assignments")
    missing = [v.name for v in model.variables if v.name not in values]
    if missing:
        raise SolutionParseError(f"solution lacks variables: {missing[:5]}")

    parsed: dict[str, float] = {}
    for v in model.variables:
        raw = values[v.name]
        if not isinstance(raw, (int, float)) or isinstance(raw, bool):
            raise SolutionParseError(f"value of {v.name} is not a number")
        x = float(raw)
        if v.kind == "B":
            nearest = round(x)
            if abs(x - nearest) > 1e-6 or nearest not in (0, 1):
                raise IntegralityError(f"binary {v.name} = {x} is not integral")
            x = float(nearest)
        parsed[v.name] = x

    frequencies = {q: parsed[f"f_{q}"] for q in range(model.n_qubits)}
    if model.mode == "free":
        orientations = {pair: int(parsed[name]) for pair, name in model.orientation_vars.items()}
    else:
        orientations = dict(model.orientation_fixed)
    slacks = {fam: parsed[name] for fam, name in model.slack_vars.items()}
    objective = sum(slacks[fam] - model.slack_base[fam] for fam in slacks)
    return Solution(
        status=status,
        frequencies=frequencies,
        orientations=orientations,
        slacks=slacks,
        objective_value=objective,
    )
