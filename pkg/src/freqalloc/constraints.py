"""Collision constraint families for cross-resonance transmon lattices.

All frequencies are in MHz.  A gate on the directed coupler control -> target
drives the control qubit at the target's frequency, so the drive frequency
tracks the target.  The families and their measured expressions are:

    A1  |f_a - f_b|                coupled pair addressable (undirected)
    A2  |f_a - f_b - alpha|        pair vs two-photon transition (undirected)
    C1  f_c + alpha <= f_t <= f_c  drive inside the control's band (window)
    E1  |f_t - f_c|                drive off the control's 0-1 line
    E2  |f_t - f_c - alpha|        drive off the control's 1-2 line
    D1  |f_t - f_c - alpha/2|      drive off the control's two-photon point
    S1  |f_t - f_k|                drive vs spectator 0-1
    S2  |f_t - f_k - alpha|        drive vs spectator 1-2
    T1  |f_t + f_k - 2 f_c - alpha|  drive+spectator two-photon process
    DIFF ||f_p - f_q| - |f_u - f_v||  detuning gaps of disjoint couplers

Undirected families use the canonical stored order (low id first).  Spectators
k are the distinct neighbors of the target other than the control.  Every
family except C1 and DIFF is a lower bound on an absolute value; C1 is a hard
window (no slack) and DIFF separates (or, with diff_separation=False, pins
together) the absolute detunings of vertex-disjoint coupler pairs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .topology import Edge, Topology, edge_key, parse_edge_key, spectator_triples

# Families carrying a slack lower bound, in canonical emission order.
BOUNDED_FAMILIES = ("A1", "A2", "E1", "E2", "D1", "S1", "S2", "T1")
ALL_FAMILIES = ("A1", "A2", "C1", "E1", "E2", "D1", "S1", "S2", "T1")

DEFAULT_BOUNDS = {
    "A1": 17.0,
    "A2": 30.0,
    "E1": 17.0,
    "E2": 30.0,
    "D1": 2.0,
    "S1": 17.0,
    "S2": 25.0,
    "T1": 17.0,
}


@dataclass
class ConstraintParams:
    """Numeric knobs shared by model building, checking, and sampling.

    Attributes:
        base_bounds: family -> minimum separation in MHz; families absent
            from the map are not enforced.  C1 never appears here (windowed,
            not bounded).
        alpha: transmon anharmonicity in MHz (negative).
        eps_tol: family -> constraint tightening in MHz added on top of the
            base bound at optimization time; a C1 entry shrinks the drive
            window symmetrically.
        delta_diff: detuning-gap separation in MHz; 0 disables the DIFF
            family entirely.
        f_window: inclusive frequency window (lo, hi) in MHz.
        c1_enabled: drop the drive window entirely when False.
        diff_separation: True keeps |gap_k - gap_l| >= delta_diff; False
            restores the proximity reading |gap_k - gap_l| <= delta_diff.
    """

    base_bounds: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    alpha: float = -350.0
    eps_tol: dict[str, float] = field(default_factory=dict)
    delta_diff: float = 0.0
    f_window: tuple[float, float] = (5000.0, 5500.0)
    c1_enabled: bool = True
    diff_separation: bool = True

    def __post_init__(self) -> None:
        for fam, b in self.base_bounds.items():
            if fam not in BOUNDED_FAMILIES:
                raise ValueError(f"unknown bounded family {fam!r}")
            if b < 0:
                raise ValueError(f"negative bound for {fam}")
        for fam, e in self.eps_tol.items():
            if fam not in BOUNDED_FAMILIES + ("C1",):
                raise ValueError(f"unknown family {fam!r} in eps_tol")
            if e < 0:
                raise ValueError(f"negative tightening for {fam}")
        if self.alpha == 0:
            raise ValueError("alpha must be nonzero")
        if self.delta_diff < 0:
            raise ValueError("delta_diff must be >= 0")
        lo, hi = self.f_window
        if not lo < hi:
            raise ValueError("f_window must satisfy lo < hi")
        self.f_window = (float(lo), float(hi))

    @property
    def window_width(self) -> float:
        return self.f_window[1] - self.f_window[0]

    def base_bound(self, family: str) -> float:
        if family == "C1":
            return 0.0
        if family == "DIFF":
            return self.delta_diff
        return self.base_bounds[family]

    def tightening(self, family: str) -> float:
        return self.eps_tol.get(family, 0.0)

    def tightened_bound(self, family: str) -> float:
        if family == "DIFF":
            return self.delta_diff
        return self.base_bound(family) + self.tightening(family)

    def max_measure(self, family: str) -> float:
        """Largest value the family's absolute expression can take in-window."""
        w = self.window_width
        a = abs(self.alpha)
        return {
            "A1": w, "E1": w, "S1": w,
            "A2": w + a, "E2": w + a, "S2": w + a,
            "D1": w + a / 2.0,
            "T1": 2.0 * w + a,
        }[family]

    # -- serialization ----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "base_bounds": dict(sorted(self.base_bounds.items())),
            "alpha": self.alpha,
            "eps_tol": dict(sorted(self.eps_tol.items())),
            "delta_diff": self.delta_diff,
            "f_window": list(self.f_window),
            "c1_enabled": self.c1_enabled,
            "diff_separation": self.diff_separation,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "ConstraintParams":
        known = {
            "base_bounds", "alpha", "eps_tol", "delta_diff",
            "f_window", "c1_enabled", "diff_separation",
        }
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown constraint parameter keys: {sorted(unknown)}")
        kwargs: dict = {}
        if "base_bounds" in d:
            kwargs["base_bounds"] = {str(k): float(v) for k, v in d["base_bounds"].items()}
        if "alpha" in d:
            kwargs["alpha"] = float(d["alpha"])
        if "eps_tol" in d:
            kwargs["eps_tol"] = {str(k): float(v) for k, v in d["eps_tol"].items()}
        if "delta_diff" in d:
            kwargs["delta_diff"] = float(d["delta_diff"])
        if "f_window" in d:
            lo, hi = d["f_window"]
            kwargs["f_window"] = (float(lo), float(hi))
        if "c1_enabled" in d:
            kwargs["c1_enabled"] = bool(d["c1_enabled"])
        if "diff_separation" in d:
            kwargs["diff_separation"] = bool(d["diff_separation"])
        return ConstraintParams(**kwargs)


def default_params() -> ConstraintParams:
    """Stock bounds: A1 17, A2 30, E1 17, E2 30, D1 2, S1 17, S2 25, T1 17 MHz."""
    return ConstraintParams()


def uniform_tightening(eps: float) -> dict[str, float]:
    """Tightening map applying eps to every bounded family except D1."""
    return {fam: eps for fam in BOUNDED_FAMILIES if fam != "D1"}


@dataclass
class FrequencyAssignment:
    """Qubit frequencies in MHz plus realized coupler directions."""

    frequencies: dict[int, float]
    orientations: dict[Edge, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "frequencies_mhz": {str(q): f for q, f in sorted(self.frequencies.items())},
            "orientations": {edge_key(*e): bit for e, bit in sorted(self.orientations.items())},
        }

    @staticmethod
    def from_json_dict(d: dict) -> "FrequencyAssignment":
        return FrequencyAssignment(
            frequencies={int(q): float(f) for q, f in d["frequencies_mhz"].items()},
            orientations={parse_edge_key(k): int(v) for k, v in d.get("orientations", {}).items()},
        )


@dataclass(frozen=True)
class ConstraintRecord:
    """One constraint instance.

    participants: role order per family docline above; (a, b) canonical for
    A1/A2, (control, target) for directed families, (control, target,
    spectator) for S/T, and (p, q, u, v) for the two couplers of a DIFF pair.
    orientation_case is the orientation bit under which a directed instance
    is active (None for undirected and DIFF records); gate_pair is the
    canonical coupler whose bit gates it.
    """

    family: str
    participants: tuple[int, ...]
    edge_indexes: tuple[int, ...]
    orientation_case: int | None = None
    gate_pair: Edge | None = None


def measured_value(record: ConstraintRecord, freqs: dict[int, float], params: ConstraintParams) -> float:
    """Evaluate the record's expression at the given frequencies."""
    a = params.alpha
    p = record.participants
    fam = record.family
    if fam == "A1":
        return abs(freqs[p[0]] - freqs[p[1]])
    if fam == "A2":
        return abs(freqs[p[0]] - freqs[p[1]] - a)
    if fam == "C1":
        fc, ft = freqs[p[0]], freqs[p[1]]
        return min(fc - ft, ft - fc - a)
    if fam == "E1":
        return abs(freqs[p[1]] - freqs[p[0]])
    if fam == "E2":
        return abs(freqs[p[1]] - freqs[p[0]] - a)
    if fam == "D1":
        return abs(freqs[p[1]] - freqs[p[0]] - a / 2.0)
    if fam == "S1":
        return abs(freqs[p[1]] - freqs[p[2]])
    if fam == "S2":
        return abs(freqs[p[1]] - freqs[p[2]] - a)
    if fam == "T1":
        return abs(freqs[p[1]] + freqs[p[2]] - 2.0 * freqs[p[0]] - a)
    if fam == "DIFF":
        gap_k = abs(freqs[p[0]] - freqs[p[1]])
        gap_l = abs(freqs[p[2]] - freqs[p[3]])
        return abs(gap_k - gap_l)
    raise ValueError(f"unknown family {fam!r}")


def record_margin(
    record: ConstraintRecord,
    freqs: dict[int, float],
    params: ConstraintParams,
    tightened: bool,
) -> tuple[float, float, float]:
    """Return (measured, bound, margin); the instance holds iff margin >= 0."""
    measured = measured_value(record, freqs, params)
    fam = record.family
    if fam == "C1":
        bound = params.tightening("C1") if tightened else 0.0
        return measured, bound, measured - bound
    if fam == "DIFF":
        bound = params.delta_diff
        if params.diff_separation:
            return measured, bound, measured - bound
        return measured, bound, bound - measured
    bound = params.tightened_bound(fam) if tightened else params.base_bound(fam)
    return measured, bound, measured - bound


# -- enumeration -------------------------------------------------------------


def _directed_records(
    topo: Topology,
    edge_index: int,
    pair: Edge,
    case: int,
    params: ConstraintParams,
) -> list[ConstraintRecord]:
    ctrl, tgt = (pair[0], pair[1]) if case == 0 else (pair[1], pair[0])
    out = []
    if params.c1_enabled:
        out.append(ConstraintRecord("C1", (ctrl, tgt), (edge_index,), case, pair))
    for fam in ("E1", "E2", "D1"):
        if fam in params.base_bounds:
            out.append(ConstraintRecord(fam, (ctrl, tgt), (edge_index,), case, pair))
    spectators = [k for (_, _, k) in spectator_triples(topo, ctrl, tgt)]
    for k in spectators:
        for fam in ("S1", "S2", "T1"):
            if fam in params.base_bounds:
                out.append(ConstraintRecord(fam, (ctrl, tgt, k), (edge_index,), case, pair))
    return out


def enumerate_records(topo: Topology, mode: str, params: ConstraintParams) -> list[ConstraintRecord]:
    """Materialize every constraint instance for the topology.

    Args:
        topo: coupler graph; fixed mode requires topo.orientation to cover
            every coupler pair.
        mode: "fixed" emits directed instances only for the given
            orientation; "free" emits both orientation cases of every
            directed instance so a model can gate them on orientation bits.
        params: families, bounds, and the DIFF setting.

    Returns:
        Records in deterministic order: per edge index the undirected
        families, then directed cases, then DIFF pairs lexicographically.
    """
    if mode not in ("fixed", "free"):
        raise ValueError(f"mode must be 'fixed' or 'free', got {mode!r}")
    if mode == "fixed":
        if topo.orientation is None:
            raise ValueError("fixed mode requires topo.orientation")
        missing = topo.edge_pairs() - set(topo.orientation)
        if missing:
            raise ValueError(f"fixed mode lacks orientation for {sorted(missing)}")

    records: list[ConstraintRecord] = []
    for idx, pair in enumerate(topo.edges):
        for fam in ("A1", "A2"):
            if fam in params.base_bounds:
                records.append(ConstraintRecord(fam, pair, (idx,)))
        if mode == "fixed":
            records.extend(_directed_records(topo, idx, pair, topo.orientation[pair], params))
        else:
            for case in (0, 1):
                records.extend(_directed_records(topo, idx, pair, case, params))

    if params.delta_diff > 0:
        for i, j in edge_difference_pairs(topo):
            (p, q), (u, v) = topo.edges[i], topo.edges[j]
            records.append(ConstraintRecord("DIFF", (p, q, u, v), (i, j)))
    return records


def edge_difference_pairs(topo: Topology) -> list[tuple[int, int]]:
    """Vertex-disjoint coupler pairs as (edge_index, edge_index), i < j."""
    pairs = []
    for i in range(len(topo.edges)):
        for j in range(i + 1, len(topo.edges)):
            if not set(topo.edges[i]) & set(topo.edges[j]):
                pairs.append((i, j))
    return pairs


# -- checking ---------------------------------------------------------------


@dataclass
class Violation:
    family: str
    participants: tuple[int, ...]
    measured: float
    bound: float
    margin: float

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "participants": list(self.participants),
            "measured_mhz": self.measured,
            "bound_mhz": self.bound,
            "margin_mhz": self.margin,
        }


@dataclass
class ViolationReport:
    n_instances: int
    violations: list[Violation]
    min_margin: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def family_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for v in self.violations:
            counts[v.family] = counts.get(v.family, 0) + 1
        return counts

    def to_json_dict(self) -> dict:
        return {
            "ok": self.ok,
            "n_instances": self.n_instances,
            "n_violations": len(self.violations),
            "min_margin_mhz": self.min_margin,
            "family_counts": self.family_counts(),
            "violations": [v.to_json_dict() for v in self.violations],
        }


def realized_orientation(topo: Topology, assignment: FrequencyAssignment) -> dict[Edge, int]:
    """Orientation per coupler pair, assignment bits overriding topology bits."""
    merged: dict[Edge, int] = dict(topo.orientation or {})
    merged.update(assignment.orientations)
    missing = topo.edge_pairs() - set(merged)
    if missing:
        raise ValueError(f"no orientation for couplers {sorted(missing)}")
    return merged


def check(topo: Topology, assignment: FrequencyAssignment, params: ConstraintParams) -> ViolationReport:
    """Physical collision check: every family instance at base bounds.

    Orientations come from the assignment (falling back to the topology),
    bounds are the untightened base bounds, and DIFF is not part of the
    physical check.  An instance is violated iff its margin is < 0.
    """
    orient = realized_orientation(topo, assignment)
    fixed_topo = Topology(
        n_qubits=topo.n_qubits,
        edges=list(topo.edges),
        geometry=topo.geometry,
        orientation=orient,
        wrap_tags=dict(topo.wrap_tags),
    )
    base = ConstraintParams(
        base_bounds=dict(params.base_bounds),
        alpha=params.alpha,
        eps_tol={},
        delta_diff=0.0,
        f_window=params.f_window,
        c1_enabled=params.c1_enabled,
        diff_separation=params.diff_separation,
    )
    records = enumerate_records(fixed_topo, "fixed", base)
    violations = []
    min_margin = float("inf")
    for rec in records:
        measured, bound, margin = record_margin(rec, assignment.frequencies, base, tightened=False)
        min_margin = min(min_margin, margin)
        if margin < 0:
            violations.append(Violation(rec.family, rec.participants, measured, bound, margin))
    if not records:
        min_margin = float("inf")
    return ViolationReport(n_instances=len(records), violations=violations, min_margin=min_margin)


def load_params(path: str) -> ConstraintParams:
    with open(path, "r", encoding="utf-8") as fh:
        return ConstraintParams.from_json_dict(json.load(fh))
