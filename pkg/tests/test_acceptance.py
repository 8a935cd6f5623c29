"""Acceptance criteria, each at its stated tolerance.

Every criterion records one PASS/FAIL line; the lines are printed in the
pytest terminal summary and by ``python tests/test_acceptance.py``.
"""

import math
import time

import numpy as np
import pytest
from scipy.optimize import linprog

from batcholp.dual import solve_dual_single
from batcholp.experiments import (BatchSizeQuery, ExperimentConfig, dual_convergence_study, estimate_regret,
                                  fit_log_k, gamma_sweep, run_table, solve_batch_size)
from batcholp.market import Exponential, uniform_market
from batcholp.simplex import solve_lp_bounded

TRIALS = 1000
SEED = 0

RESULTS = []  # (criterion, passed, detail)
_TABLES = {}
_PATHWISE = []  # (label, RegretEstimate) for every trial batch of criteria 1 to 5

TARGETS = {
    "table1": ((2.26, 14.47, 19.90, 22.25, 24.74), 1.5, 0.10),
    "table2": ((65.39, 109.40, 118.86, 120.83, 121.75), 6.0, 0.10),
    "table3": ((3.75, 25.60, 35.83, 39.88, 45.93, 48.22), 4.0, 0.15),
    "table4": ((3.68, 14.11, 23.46, 28.01, 32.49, 35.09), 4.0, 0.15),
}


def record(criterion, passed, detail):
    RESULTS.append((criterion, bool(passed), detail))
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
    print(line)
    assert passed, line


def table(preset):
    if preset not in _TABLES:
        start = time.time()
        res = run_table(preset, "desk", trials=TRIALS, seed=SEED)
        _TABLES[preset] = (res, time.time() - start)
        for cfg, est in zip(res.cells, res.estimates):
            _PATHWISE.append((cfg.label(), est))
    return _TABLES[preset]


def within(got, target, absolute, relative):
    return abs(got - target) <= max(absolute, relative * abs(target))


def check_table(criterion, preset, extra=""):
    res, secs = table(preset)
    targets, absolute, relative = TARGETS[preset]
    got = [e.mean for e in res.estimates]
    ok = all(within(g, t, absolute, relative) for g, t in zip(got, targets))
    pairs = ", ".join(f"K={c.K}: {g:.2f} vs {t:.2f}" for c, g, t in zip(res.cells, got, targets))
    return ok, f"{preset} desk ({pairs}) in {secs:.0f}s{extra}"


@pytest.mark.acceptance
def test_criterion_1_table1():
    ok, detail = check_table(1, "table1")
    secs = table("table1")[1]
    record(1, ok and secs <= 180, detail + " (limit 180s)")


@pytest.mark.acceptance
def test_criterion_2_table2():
    record(2, *check_table(2, "table2"))


@pytest.mark.acceptance
def test_criterion_3_table3():
    record(3, *check_table(3, "table3"))


@pytest.mark.acceptance
def test_criterion_4_table4():
    ok, detail = check_table(4, "table4")
    t3, _ = table("table3")
    t4, _ = table("table4")
    below = all(e4.mean < e3.mean for c, e3, e4 in zip(t3.cells, t3.estimates, t4.estimates) if c.K >= 8)
    record(4, ok and below, detail + f"; known rate below unknown rate at every K >= 8: {below}")


@pytest.mark.acceptance
def test_criterion_5_n_constancy():
    ests = {}
    for n in (1280, 12800):
        est = estimate_regret(ExperimentConfig("alg1", uniform_market(1), 8, n=n, trials=TRIALS, seed=SEED,
                                               last_batch="fractional"))
        ests[n] = est
        _PATHWISE.append((f"alg1 n={n} K=8", est))
    a, b = ests[1280], ests[12800]
    pooled = math.hypot(a.stderr, b.stderr)
    gap = abs(a.mean - b.mean)
    record(5, gap <= 3 * pooled,
           f"K=8 regret n=1280 {a.mean:.2f}, n=12800 {b.mean:.2f}, gap {gap:.2f} <= 3 x {pooled:.2f}")


@pytest.mark.acceptance
def test_criterion_6_log_k():
    res, _ = table("table1")
    fit = fit_log_k([(c.K, e.mean) for c, e in zip(res.cells, res.estimates)])
    record(6, fit.r2 >= 0.9 and fit.slope > 0, f"slope {fit.slope:.3f}, R^2 {fit.r2:.4f}")


def _brute_objectives(r, a, d):
    cands = np.concatenate([[0.0], r / a])
    vals = d * cands + np.maximum(r[None, :] - a[None, :] * cands[:, None], 0.0).sum(axis=1) / r.shape[0]
    return vals.min()


@pytest.mark.acceptance
def test_criterion_7_dual_exactness():
    g = np.random.default_rng(7)
    start = time.time()
    worst = 0.0
    for _ in range(10_000):
        n = int(g.integers(1, 201))
        r = 1 + 18 * g.random(n)
        a = 1 + 18 * g.random(n)
        if g.random() < 0.3:
            r, a = np.round(r), np.round(a)
        d = float(g.uniform(0.2, 15.0))
        got = solve_dual_single((r, a), d).objective
        best = _brute_objectives(r, a, d)
        worst = max(worst, abs(got - best) / abs(best))
    secs = time.time() - start
    record(7, worst <= 1e-12 and secs <= 30, f"10000 instances, worst relative gap {worst:.2e}, {secs:.1f}s")


@pytest.mark.acceptance
def test_criterion_8_strong_duality():
    g = np.random.default_rng(8)
    worst, worst_pwl, worst_ref = 0.0, 0.0, 0.0
    for m in (1, 2, 4):
        for _ in range(1000):
            n = int(g.integers(1, 101))
            r = 1 + 18 * g.random(n)
            a = 1 + 18 * g.random((n, m))
            b = n * g.uniform(1.0, 9.0, size=m)
            sol = solve_lp_bounded((r, a), b)
            dual = sol.dual_value(r, a, b)
            worst = max(worst, abs(sol.optimal_value - dual) / abs(dual))
            if m == 1:
                p = solve_dual_single((r, a), b[0] / n).scalar
                pwl = b[0] * p + float(np.maximum(r - a[:, 0] * p, 0.0).sum())
                worst_pwl = max(worst_pwl, abs(sol.optimal_value - pwl) / abs(pwl))
            ref = linprog(-r, A_ub=a.T, b_ub=b, bounds=[(0, 1)] * n, method="highs")
            worst_ref = max(worst_ref, abs(sol.optimal_value + ref.fun) / abs(ref.fun))
    ok = worst <= 1e-9 and worst_pwl <= 1e-9
    record(8, ok, f"primal/dual gap {worst:.1e}, m=1 vs PWL {worst_pwl:.1e} "
                  f"(HiGHS reference gap {worst_ref:.1e})")


@pytest.mark.acceptance
def test_criterion_9_dual_convergence():
    study = dual_convergence_study(uniform_market(1), 5.0, [100, 400, 1600, 6400], replications=2000, seed=9)
    mses = ", ".join(f"{m:.2e}" for m in study.mean_squared_error)
    record(9, -1.3 <= study.slope <= -0.7,
           f"p* = {study.population_price:.10f}, MSE ({mses}), slope {study.slope:.3f}")


@pytest.mark.acceptance
def test_criterion_10_pathwise():
    for preset in ("table1", "table2", "table3", "table4"):
        table(preset)
    if not any("n=12800" in label for label, _ in _PATHWISE):
        for n in (1280, 12800):
            est = estimate_regret(ExperimentConfig("alg1", uniform_market(1), 8, n=n, trials=TRIALS, seed=SEED,
                                                   last_batch="fractional"))
            _PATHWISE.append((f"alg1 n={n} K=8", est))
    trials = sum(e.trials for _, e in _PATHWISE)
    dom = sum(e.dominance_violations for _, e in _PATHWISE)
    feas = sum(e.feasibility_violations for _, e in _PATHWISE)
    clamps = sum(e.clamp_events for _, e in _PATHWISE)
    for label, e in _PATHWISE:
        if e.clamp_events:
            print(f"clamp events in {label}: {e.clamp_events}")
    record(10, dom == 0 and feas == 0,
           f"{trials} policy runs, dominance violations {dom}, feasibility violations {feas}, "
           f"clamp events {clamps}")


@pytest.mark.acceptance
def test_criterion_11_batch_size():
    B = solve_batch_size(BatchSizeQuery(Exponential(1.0), 1e6, 1.0))
    sweep = gamma_sweep([0.1, 0.3, 0.5], [1e4], T=10.0, trials=500, seed=SEED)
    est = {c.gamma: e for c, e in zip(sweep.cells, sweep.estimates)}
    half = est[0.5]
    margins = []
    for g in (0.1, 0.3):
        pooled = math.hypot(est[g].stderr, half.stderr)
        margins.append((est[g].mean - half.mean) / pooled)
    ok = 0.00095 <= B <= 0.00105 and all(m >= 2 for m in margins)
    detail = (f"B = {B:.6g}; regret at gamma 0.1/0.3/0.5: "
              + "/".join(f"{est[g].mean:.1f}" for g in (0.1, 0.3, 0.5))
              + f", margins {margins[0]:.1f} and {margins[1]:.1f} pooled SE")
    record(11, ok, detail)


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    tests.sort(key=lambda f: int(f.__name__.split("_")[2]))
    for t in tests:
        try:
            t()
        except AssertionError:
            pass
    print()
    for c, ok, detail in RESULTS:
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {c}: {detail}")
