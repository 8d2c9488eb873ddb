"""Monte Carlo yield under Gaussian fabrication dispersion.

A chip counts as good only when every collision instance holds at base
bounds; there is no partial credit, but the mean number of violated
instances per trial is reported alongside as a separate statistic.

Trial t draws its perturbation from an independent Philox substream keyed
by (seed, counter = t * 2^64), so success counts are identical whether
trials run serially, in blocks, or across processes, and a smaller sigma
reuses the same standard normals (common random numbers) scaled down.
Exact streams are not part of the contract; confidence intervals are.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .constraints import (
    ConstraintParams,
    FrequencyAssignment,
    enumerate_records,
    realized_orientation,
)
from .topology import Topology


class BracketError(ValueError):
    """The sigma bracket does not straddle the target yield."""


def wilson_ci(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score 95 pct interval for a binomial fraction."""
    if trials == 0:
        return (0.0, 1.0)
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2.0 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1.0 - p) / trials + z * z / (4.0 * trials * trials))
    # the interval contains p mathematically; keep that true under rounding
    return (max(0.0, min(center - half, p)), min(1.0, max(center + half, p)))


@dataclass
class YieldEstimate:
    """One Monte Carlo run at a single dispersion value."""

    sigma: float
    trials: int
    successes: int
    yield_fraction: float
    ci95: tuple[float, float]
    seed: int
    mean_violations: float

    def __post_init__(self) -> None:
        if not 0 <= self.successes <= self.trials:
            raise ValueError("successes must lie in [0, trials]")
        if not 0.0 <= self.yield_fraction <= 1.0:
            raise ValueError("yield must lie in [0, 1]")
        lo, hi = self.ci95
        if not lo <= self.yield_fraction <= hi:
            raise ValueError("yield must lie inside its confidence interval")

    def to_json_dict(self) -> dict:
        return {
            "sigma_mhz": self.sigma,
            "trials": self.trials,
            "successes": self.successes,
            "yield": self.yield_fraction,
            "ci95": [self.ci95[0], self.ci95[1]],
            "seed": self.seed,
            "mean_violations": self.mean_violations,
        }


CSV_HEADER = "sigma,trials,successes,yield,ci_lo,ci_hi"


def csv_row(est: YieldEstimate) -> str:
    return "%.6g,%d,%d,%.8g,%.8g,%.8g" % (
        est.sigma, est.trials, est.successes, est.yield_fraction, est.ci95[0], est.ci95[1]
    )


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=trial * 2**64))


def sample_perturbation(
    assignment: FrequencyAssignment, sigma: float, rng: np.random.Generator
) -> FrequencyAssignment:
    """Shift every frequency by an independent Normal(0, sigma^2) draw.

    Draws are consumed in ascending qubit-id order; orientations pass
    through untouched.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    qubits = sorted(assignment.frequencies)
    noise = rng.standard_normal(len(qubits))
    freqs = {q: assignment.frequencies[q] + sigma * float(noise[i]) for i, q in enumerate(qubits)}
    return FrequencyAssignment(frequencies=freqs, orientations=dict(assignment.orientations))


@dataclass
class _Compiled:
    """Base-bound instances flattened into numpy arrays for block checks."""

    n_qubits: int
    abs_idx: np.ndarray    # (n_abs, 3) qubit columns, padded with 0
    abs_coef: np.ndarray   # (n_abs, 3) matching coefficients, padded with 0
    abs_const: np.ndarray  # (n_abs,)
    abs_bound: np.ndarray  # (n_abs,)
    c1_ctrl: np.ndarray    # (n_c1,)
    c1_tgt: np.ndarray     # (n_c1,)
    alpha: float

    @property
    def n_instances(self) -> int:
        return len(self.abs_bound) + len(self.c1_ctrl)


def _compile(topo: Topology, assignment: FrequencyAssignment, params: ConstraintParams) -> _Compiled:
    missing = [q for q in range(topo.n_qubits) if q not in assignment.frequencies]
    if missing:
        raise ValueError(f"assignment lacks frequencies for qubits {missing[:5]}")
    orient = realized_orientation(topo, assignment)
    fixed = Topology(
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
    records = enumerate_records(fixed, "fixed", base)

    a = params.alpha
    rows = []
    c1c, c1t = [], []
    for rec in records:
        p = rec.participants
        fam = rec.family
        if fam == "C1":
            c1c.append(p[0])
            c1t.append(p[1])
            continue
        if fam in ("A1", "A2"):
            idx, coef = (p[0], p[1], 0), (1.0, -1.0, 0.0)
            const = 0.0 if fam == "A1" else -a
        elif fam in ("E1", "E2", "D1"):
            idx, coef = (p[1], p[0], 0), (1.0, -1.0, 0.0)
            const = {"E1": 0.0, "E2": -a, "D1": -a / 2.0}[fam]
        elif fam in ("S1", "S2"):
            idx, coef = (p[1], p[2], 0), (1.0, -1.0, 0.0)
            const = 0.0 if fam == "S1" else -a
        else:  # T1
            idx, coef = (p[1], p[2], p[0]), (1.0, 1.0, -2.0)
            const = -a
        rows.append((idx, coef, const, base.base_bound(fam)))

    if rows:
        abs_idx = np.array([r[0] for r in rows], dtype=np.intp)
        abs_coef = np.array([r[1] for r in rows])
        abs_const = np.array([r[2] for r in rows])
        abs_bound = np.array([r[3] for r in rows])
    else:
        abs_idx = np.zeros((0, 3), dtype=np.intp)
        abs_coef = np.zeros((0, 3))
        abs_const = np.zeros(0)
        abs_bound = np.zeros(0)
    return _Compiled(
        n_qubits=topo.n_qubits,
        abs_idx=abs_idx,
        abs_coef=abs_coef,
        abs_const=abs_const,
        abs_bound=abs_bound,
        c1_ctrl=np.array(c1c, dtype=np.intp),
        c1_tgt=np.array(c1t, dtype=np.intp),
        alpha=a,
    )


def _eval_block(comp: _Compiled, freqs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(success flags, violated-instance counts) for a (B, n_qubits) block."""
    viol = np.zeros(freqs.shape[0], dtype=np.int64)
    if len(comp.abs_bound):
        expr = np.einsum("bij->bi", freqs[:, comp.abs_idx] * comp.abs_coef) + comp.abs_const
        bad = np.abs(expr) < comp.abs_bound
        viol += bad.sum(axis=1)
    if len(comp.c1_ctrl):
        fc = freqs[:, comp.c1_ctrl]
        ft = freqs[:, comp.c1_tgt]
        bad = np.minimum(fc - ft, ft - fc - comp.alpha) < 0.0
        viol += bad.sum(axis=1)
    return viol == 0, viol


def _run_trials(
    comp: _Compiled, base: np.ndarray, sigma: float, seed: int, start: int, count: int,
    block: int = 4096,
) -> tuple[int, int]:
    """Trials [start, start+count): (successes, total violated instances)."""
    successes = 0
    viol_total = 0
    done = 0
    while done < count:
        b = min(block, count - done)
        noise = np.empty((b, comp.n_qubits))
        for i in range(b):
            noise[i] = _trial_rng(seed, start + done + i).standard_normal(comp.n_qubits)
        ok, viol = _eval_block(comp, base + sigma * noise)
        successes += int(ok.sum())
        viol_total += int(viol.sum())
        done += b
    return successes, viol_total


def estimate_yield(
    assignment: FrequencyAssignment,
    topo: Topology,
    params: ConstraintParams,
    sigma: float,
    trials: int,
    seed: int = 0,
    n_jobs: int = 1,
) -> YieldEstimate:
    """Fraction of perturbed copies with zero base-bound violations.

    Per-trial substreams make the result a pure function of (seed, sigma,
    trials): n_jobs only shards the trial range across processes.  An
    infeasible unperturbed assignment is fine; its yield is just low.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    comp = _compile(topo, assignment, params)
    base = np.array([assignment.frequencies[q] for q in range(topo.n_qubits)])

    if n_jobs <= 1:
        successes, viol = _run_trials(comp, base, sigma, seed, 0, trials)
    else:
        n_jobs = min(n_jobs, trials)
        sizes = [trials // n_jobs + (1 if i < trials % n_jobs else 0) for i in range(n_jobs)]
        starts = [sum(sizes[:i]) for i in range(n_jobs)]
        successes = viol = 0
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [
                pool.submit(_run_trials, comp, base, sigma, seed, s, c)
                for s, c in zip(starts, sizes)
            ]
            for fut in futures:
                s, v = fut.result()
                successes += s
                viol += v

    return YieldEstimate(
        sigma=sigma,
        trials=trials,
        successes=successes,
        yield_fraction=successes / trials,
        ci95=wilson_ci(successes, trials),
        seed=seed,
        mean_violations=viol / trials,
    )


def composed_yield(local_yield: float, replicas: int) -> float:
    """Chip yield from replica yield under the independence approximation.

    This is an estimate: replicas of a unit share no fabrication randomness
    by assumption, and seam constraints are ignored.  Full-chip Monte Carlo
    is authoritative whenever wrap or seam constraints exist.
    """
    if not 0.0 <= local_yield <= 1.0:
        raise ValueError("local_yield must lie in [0, 1]")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    return local_yield ** replicas


def threshold_dispersion(
    assignment: FrequencyAssignment,
    topo: Topology,
    params: ConstraintParams,
    target_yield: float,
    trials: int,
    sigma_bracket: tuple[float, float],
    tol_mhz: float = 0.1,
    seed: int = 0,
    max_trials: int = 400_000,
    n_jobs: int = 1,
) -> float:
    """Dispersion at which yield crosses the target, by bisection.

    Yield is treated as monotone nonincreasing in sigma.  At each probe the
    trial count is escalated (x4 up to max_trials) until the Wilson CI
    excludes the target; if it still straddles at the cap, the point
    estimate decides.  Same-seed probes share random numbers across sigma,
    so the bisection path is deterministic for a fixed seed.

    Raises:
        BracketError: the bracket endpoints do not straddle target_yield.
    """
    if not 0.0 < target_yield < 1.0:
        raise ValueError("target_yield must lie in (0, 1)")
    lo, hi = sigma_bracket
    if not 0.0 <= lo < hi:
        raise ValueError("sigma_bracket must satisfy 0 <= lo < hi")
    if tol_mhz <= 0:
        raise ValueError("tol_mhz must be > 0")

    def probe(sigma: float) -> tuple[YieldEstimate, str]:
        t = trials
        while True:
            est = estimate_yield(assignment, topo, params, sigma, t, seed=seed, n_jobs=n_jobs)
            if est.ci95[0] > target_yield:
                return est, "above"
            if est.ci95[1] < target_yield:
                return est, "below"
            if t >= max_trials:
                side = "above" if est.yield_fraction >= target_yield else "below"
                return est, side
            t = min(max_trials, 4 * t)

    _, side_lo = probe(lo)
    if side_lo == "below":
        raise BracketError(f"yield at sigma={lo} is below the target {target_yield}")
    _, side_hi = probe(hi)
    if side_hi == "above":
        raise BracketError(f"yield at sigma={hi} is above the target {target_yield}")

    while hi - lo > tol_mhz:
        mid = 0.5 * (lo + hi)
        _, side = probe(mid)
        if side == "above":
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
