"""Monte Carlo yield, threshold search, and composition."""
import dataclasses
import json

import numpy as np
import pytest

from freqalloc.constraints import FrequencyAssignment, default_params, enumerate_records
from freqalloc.milp_adapter import solve_lp
from freqalloc.model import build, export_lp, import_solution
from freqalloc.topology import Topology, square_grid
from freqalloc.yield_mc import (
    CSV_HEADER,
    BracketError,
    YieldEstimate,
    composed_yield,
    csv_row,
    estimate_yield,
    sample_perturbation,
    threshold_dispersion,
    wilson_ci,
)

from .oracles import gaussian_pair_success, wilson_interval


def a1_only_params():
    return dataclasses.replace(
        default_params(), base_bounds={"A1": 17.0}, c1_enabled=False
    )


def a1_pair(gap):
    topo = Topology(n_qubits=2, edges=[(0, 1)], orientation={(0, 1): 0})
    asg = FrequencyAssignment(
        frequencies={0: 5100.0, 1: 5100.0 + gap}, orientations={(0, 1): 0}
    )
    return topo, asg


def full_pair():
    # wide margins in every family: A1 103, A2 200, C1 120, E1 103, E2 200, D1 53
    topo = Topology(n_qubits=2, edges=[(0, 1)])
    asg = FrequencyAssignment(
        frequencies={0: 5100.0, 1: 5220.0}, orientations={(0, 1): 1}
    )
    return topo, asg


def solved_2x2():
    p = default_params()
    grid = square_grid(2, 2)
    m = build(grid, enumerate_records(grid, "free", p), p, "free")
    sol = import_solution(json.dumps(solve_lp(export_lp(m))), m)
    assert sol.status == "optimal"
    return grid, sol.as_assignment(), p


# -- sample_perturbation ---------------------------------------------------------


def test_perturbation_sigma_zero_is_identity():
    _, asg = a1_pair(40.0)
    rng = np.random.default_rng(0)
    out = sample_perturbation(asg, 0.0, rng)
    assert out.frequencies == asg.frequencies
    assert out.orientations == asg.orientations


def test_perturbation_reproducible_for_fixed_seed():
    _, asg = a1_pair(40.0)
    a = sample_perturbation(asg, 10.0, np.random.default_rng(9))
    b = sample_perturbation(asg, 10.0, np.random.default_rng(9))
    assert a.frequencies == b.frequencies


def test_perturbation_rejects_negative_sigma():
    _, asg = a1_pair(40.0)
    with pytest.raises(ValueError):
        sample_perturbation(asg, -1.0, np.random.default_rng(0))


def test_perturbation_empirical_stddev():
    asg = FrequencyAssignment(frequencies={0: 5000.0})
    rng = np.random.default_rng(123)
    draws = np.array(
        [sample_perturbation(asg, 10.0, rng).frequencies[0] - 5000.0 for _ in range(100_000)]
    )
    assert draws.std() == pytest.approx(10.0, abs=0.2)


# -- estimate_yield ---------------------------------------------------------------


def test_yield_exactly_one_at_sigma_zero():
    topo, asg = a1_pair(40.0)
    est = estimate_yield(asg, topo, a1_only_params(), sigma=0.0, trials=500, seed=1)
    assert est.yield_fraction == 1.0
    assert est.successes == 500
    assert est.mean_violations == 0.0


def test_yield_matches_quadrature_at_tight_margin():
    topo, asg = a1_pair(17.0)
    est = estimate_yield(asg, topo, a1_only_params(), sigma=10.0, trials=100_000, seed=7)
    expected = gaussian_pair_success(17.0, 17.0, 10.0)
    assert est.ci95[0] <= expected <= est.ci95[1]
    # margin 0 means barely half the perturbations survive
    assert est.yield_fraction < 0.52


def test_yield_near_one_with_wide_margins():
    topo, asg = full_pair()
    est = estimate_yield(asg, topo, default_params(), sigma=5.0, trials=20_000, seed=11)
    assert est.yield_fraction >= 0.999


def test_infeasible_assignment_allowed():
    topo, asg = a1_pair(10.0)  # 7 MHz short of the A1 bound
    est = estimate_yield(asg, topo, a1_only_params(), sigma=0.0, trials=100, seed=2)
    assert est.yield_fraction == 0.0
    assert est.mean_violations == 1.0
    est2 = estimate_yield(asg, topo, a1_only_params(), sigma=10.0, trials=20_000, seed=2)
    assert est2.yield_fraction > 0.0


def test_parallel_equals_serial():
    topo, asg = full_pair()
    p = default_params()
    a = estimate_yield(asg, topo, p, sigma=15.0, trials=10_000, seed=7)
    b = estimate_yield(asg, topo, p, sigma=15.0, trials=10_000, seed=7, n_jobs=3)
    assert a.successes == b.successes
    assert a.mean_violations == b.mean_violations


def test_deterministic_per_seed():
    topo, asg = full_pair()
    p = default_params()
    a = estimate_yield(asg, topo, p, sigma=15.0, trials=5_000, seed=7)
    b = estimate_yield(asg, topo, p, sigma=15.0, trials=5_000, seed=7)
    c = estimate_yield(asg, topo, p, sigma=15.0, trials=5_000, seed=8)
    assert a == b
    assert a.successes != c.successes


def test_common_random_numbers_monotone_in_sigma():
    topo, asg = full_pair()
    p = default_params()
    ys = [
        estimate_yield(asg, topo, p, sigma=s, trials=20_000, seed=3).yield_fraction
        for s in (2.0, 5.0, 10.0, 15.0, 20.0)
    ]
    assert all(a >= b for a, b in zip(ys, ys[1:]))


def test_yield_cross_checks_slow_check_route():
    # the compiled fast path must agree with check() trial by trial
    from freqalloc.constraints import check
    from freqalloc.yield_mc import _compile, _eval_block

    topo, asg, p = solved_2x2()
    comp = _compile(topo, asg, p)
    rng = np.random.default_rng(17)
    for _ in range(200):
        perturbed = sample_perturbation(asg, 25.0, rng)
        row = np.array([[perturbed.frequencies[q] for q in range(topo.n_qubits)]])
        ok_fast, viol = _eval_block(comp, row)
        rep = check(topo, perturbed, p)
        assert bool(ok_fast[0]) == rep.ok
        assert int(viol[0]) == len(rep.violations)


def test_estimate_validation():
    topo, asg = full_pair()
    p = default_params()
    with pytest.raises(ValueError):
        estimate_yield(asg, topo, p, sigma=-1.0, trials=10)
    with pytest.raises(ValueError):
        estimate_yield(asg, topo, p, sigma=1.0, trials=0)
    incomplete = FrequencyAssignment(frequencies={0: 5100.0}, orientations={(0, 1): 1})
    with pytest.raises(ValueError):
        estimate_yield(incomplete, topo, p, sigma=1.0, trials=10)


# -- YieldEstimate container ------------------------------------------------------


def test_estimate_invariants_enforced():
    with pytest.raises(ValueError):
        YieldEstimate(sigma=1.0, trials=10, successes=11, yield_fraction=1.1,
                      ci95=(0.0, 1.0), seed=0, mean_violations=0.0)
    with pytest.raises(ValueError):
        YieldEstimate(sigma=1.0, trials=10, successes=5, yield_fraction=0.9,
                      ci95=(0.0, 0.8), seed=0, mean_violations=0.0)


def test_estimate_json_and_csv():
    est = YieldEstimate(sigma=10.0, trials=1000, successes=900, yield_fraction=0.9,
                        ci95=wilson_ci(900, 1000), seed=4, mean_violations=0.15)
    d = est.to_json_dict()
    assert d["sigma_mhz"] == 10.0 and d["yield"] == 0.9 and d["mean_violations"] == 0.15
    assert CSV_HEADER == "sigma,trials,successes,yield,ci_lo,ci_hi"
    row = csv_row(est)
    assert row.split(",")[0] == "10" and row.split(",")[3] == "0.9"


def test_wilson_matches_reference_formula():
    for n, k in [(10, 0), (10, 10), (100, 50), (1000, 999), (100_000, 50_810)]:
        assert wilson_ci(k, n) == pytest.approx(wilson_interval(k, n), abs=1e-12)
    lo, hi = wilson_ci(1000, 1000)
    assert hi == 1.0 and lo < 1.0


# -- composed_yield ---------------------------------------------------------------


def test_composed_yield_values():
    assert composed_yield(1.0, 64) == 1.0
    assert composed_yield(0.965, 62) == pytest.approx(0.1097, abs=5e-4)
    assert composed_yield(0.965, 62) > 0.10
    assert composed_yield(0.965, 64) == pytest.approx(0.1022, abs=5e-4)
    with pytest.raises(ValueError):
        composed_yield(1.5, 2)
    with pytest.raises(ValueError):
        composed_yield(0.5, 0)


# -- threshold_dispersion ----------------------------------------------------------


def test_threshold_bisection_reproducible():
    grid, asg, p = solved_2x2()
    kwargs = dict(target_yield=0.8, trials=1000, sigma_bracket=(5.0, 40.0),
                  tol_mhz=0.5, seed=5, max_trials=16_000)
    a = threshold_dispersion(asg, grid, p, **kwargs)
    b = threshold_dispersion(asg, grid, p, **kwargs)
    assert a == b
    assert 5.0 < a < 40.0
    # the crossing must actually separate the yields
    y_lo = estimate_yield(asg, grid, p, sigma=a - 2.0, trials=4000, seed=5).yield_fraction
    y_hi = estimate_yield(asg, grid, p, sigma=a + 2.0, trials=4000, seed=5).yield_fraction
    assert y_lo > y_hi


def test_threshold_bracket_errors():
    grid, asg, p = solved_2x2()
    with pytest.raises(BracketError):
        threshold_dispersion(asg, grid, p, target_yield=0.8, trials=1000,
                             sigma_bracket=(30.0, 40.0), seed=5, max_trials=4000)
    with pytest.raises(BracketError):
        threshold_dispersion(asg, grid, p, target_yield=0.8, trials=1000,
                             sigma_bracket=(1.0, 10.0), seed=5, max_trials=4000)


def test_threshold_argument_validation():
    grid, asg, p = solved_2x2()
    with pytest.raises(ValueError):
        threshold_dispersion(asg, grid, p, target_yield=1.5, trials=100,
                             sigma_bracket=(1.0, 10.0))
    with pytest.raises(ValueError):
        threshold_dispersion(asg, grid, p, target_yield=0.5, trials=100,
                             sigma_bracket=(10.0, 1.0))
    with pytest.raises(ValueError):
        threshold_dispersion(asg, grid, p, target_yield=0.5, trials=100,
                             sigma_bracket=(1.0, 10.0), tol_mhz=0.0)
