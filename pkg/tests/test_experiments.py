import math
import warnings

import numpy as np
import pytest

from batcholp.errors import InvalidConfig, InvalidInput, NoRootError, UnsupportedSpec
from batcholp.experiments import (CSV_COLUMNS, BatchSizeQuery, ExperimentConfig, batches_for_gamma,
                                  default_workers, dual_convergence_study, estimate_regret, evaluate_grid,
                                  fit_log_k, gamma_sweep, run_table, solve_batch_size)
from batcholp.market import Deterministic, Exponential, MarketSpec, Bounds, Uniform, uniform_market


def cfg(policy="alg1", K=2, **kw):
    base = dict(n=64, trials=8, seed=1)
    if policy in ("alg3", "alg3-known-rate", "alg4"):
        base = dict(rate=4.0, horizon=16.0, trials=8, seed=1)
    base.update(kw)
    spec = base.pop("spec", uniform_market(4 if policy.startswith("alg2") else 1,
                                           impatience=Exponential(1.0) if policy == "alg4" else None))
    return ExperimentConfig(policy, spec, K, **base)


def test_reproducible_single_trial():
    a = estimate_regret(cfg(trials=1))
    b = estimate_regret(cfg(trials=1))
    assert a.mean == b.mean and a.fingerprint == b.fingerprint
    assert a.stderr == 0.0


def test_worker_invariance():
    cells = [cfg("alg1", 2), cfg("alg1", 8), cfg("alg3", 4)]
    serial = evaluate_grid(cells, workers=1)
    parallel = evaluate_grid(cells, workers=3)
    for s, p in zip(serial, parallel):
        assert s.mean == p.mean and s.stderr == p.stderr


def test_common_random_numbers_share_benchmark():
    a = estimate_regret(cfg("alg1", 2, keep_pairs=True))
    b = estimate_regret(cfg("alg1", 8, keep_pairs=True))
    assert np.array_equal(a.pairs[:, 0], b.pairs[:, 0])


def test_stderr_definition():
    est = estimate_regret(cfg("alg1", 4, keep_pairs=True, trials=12))
    regret = est.pairs[:, 0] - est.pairs[:, 1]
    assert est.stderr == pytest.approx(regret.std(ddof=1) / math.sqrt(12), rel=1e-12)
    assert est.min_regret >= -1e-9 * est.pairs[:, 0].max()


@pytest.mark.parametrize("policy", ["alg1", "alg2", "alg2-nohistory", "alg3", "alg3-known-rate", "alg4", "ahdla"])
def test_slack_budget_zero_regret(policy):
    # with impatience only the customers the policy can still reach count
    K = 1 if policy == "ahdla" else 4
    bench = "filtered" if policy == "alg4" else "offline"
    est = estimate_regret(cfg(policy, K, budget_per_unit=19.0 * 3, benchmark=bench))
    assert est.pathwise_ok
    if policy == "alg4":
        # the filtered benchmark sums a subset, so rounding differs in the last bits
        assert abs(est.mean) < 1e-9
    else:
        assert est.mean == 0.0


def test_pathwise_checks_all_policies():
    for policy in ["alg1", "alg2", "alg3", "alg3-known-rate", "alg4"]:
        for mode in ["integral", "fractional"]:
            est = estimate_regret(cfg(policy, 4, last_batch=mode))
            assert est.pathwise_ok and est.mean >= 0


def test_invalid_cell_is_named():
    with pytest.raises(InvalidConfig, match=r"alg1 m=1 n=64 K=3"):
        estimate_regret(cfg("alg1", 3))
    with pytest.raises(InvalidConfig, match="unknown policy"):
        estimate_regret(cfg("alg9"))
    with pytest.raises(InvalidConfig):
        estimate_regret(cfg("alg1", 2, spec=uniform_market(2)))
    with pytest.raises(InvalidConfig):
        estimate_regret(cfg("alg4", 2, spec=uniform_market(1)))


def test_filtered_benchmark_cell():
    off = estimate_regret(cfg("alg4", 4, keep_pairs=True))
    fil = estimate_regret(cfg("alg4", 4, keep_pairs=True, benchmark="filtered"))
    assert np.all(fil.pairs[:, 0] <= off.pairs[:, 0] + 1e-9)
    assert np.array_equal(fil.pairs[:, 1], off.pairs[:, 1])


def test_table_csv_layout(tmp_path):
    res = run_table("table1", "desk", trials=3, seed=7)
    assert [c.K for c in res.cells] == [2, 8, 32, 64, 128]
    path = tmp_path / "t.csv"
    res.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == CSV_COLUMNS
    assert len(lines) == 6
    row = lines[1].split(",")
    assert row[:6] == ["table1", "alg1", "1", "1280", "1280", "2"] and row[6] == ""
    res.to_csv(tmp_path / "u.csv")
    assert (tmp_path / "u.csv").read_bytes() == path.read_bytes()
    with pytest.raises(InvalidConfig, match="table1"):
        run_table("table9")


def test_table_row_counts():
    from batcholp.experiments import PRESETS
    assert len(PRESETS["table3"].cells("desk", 1, 0)) == 6
    assert len(PRESETS["table3"].cells("full", 1, 0)) == 72
    assert len(PRESETS["table2"].cells("full", 1, 0)) == 25


def test_ahdla_worse_than_batching():
    # per-customer re-pricing loses to K = 8 on matched streams
    base = dict(n=1280, trials=60, seed=3)
    a = estimate_regret(ExperimentConfig("ahdla", uniform_market(1), 1, **base))
    b = estimate_regret(ExperimentConfig("alg1", uniform_market(1), 8, **base))
    assert a.mean > b.mean


def test_fit_log_k():
    ks = [2, 8, 32, 128]
    fit = fit_log_k([(k, 3 * math.log(k)) for k in ks])
    assert fit.slope == pytest.approx(3.0) and fit.r2 == pytest.approx(1.0)
    flat = fit_log_k([(k, 4.0) for k in ks])
    assert flat.slope == 0.0
    with pytest.raises(InvalidInput):
        fit_log_k([(2, 1.0), (8, 2.0), (8, 3.0)])


def test_convergence_study_shapes():
    st = dual_convergence_study(uniform_market(1), 5.0, [100], replications=20)
    assert st.slope is None and len(st.mean_squared_error) == 1
    spec = MarketSpec(1, Deterministic(3.0), Deterministic(1.0), Bounds(19, 19, 1, 0.1, 9))
    st = dual_convergence_study(spec, 0.5, [10, 40], replications=5)
    assert max(st.mean_squared_error) < 1e-20
    with pytest.raises(UnsupportedSpec):
        dual_convergence_study(uniform_market(2), 5.0, [10], 2)


def test_batch_size():
    B = solve_batch_size(BatchSizeQuery(Exponential(1.0), 1e6, 1.0))
    assert 0.00095 <= B <= 0.00105
    # B (1 - e^-B) = 1e-6 checked by direct evaluation
    assert B * (1 - math.exp(-B)) == pytest.approx(1e-6, rel=1e-5)
    assert solve_batch_size(BatchSizeQuery(Deterministic(0.0), 4.0)) == pytest.approx(0.25, abs=1e-9)
    assert solve_batch_size(BatchSizeQuery(Exponential(1.0), 3.0, 0.0)) == 0.0
    with pytest.raises(NoRootError):
        solve_batch_size(BatchSizeQuery(Uniform(1e13, 2e13), 1.0))


def test_batches_for_gamma():
    assert batches_for_gamma(10.0, 1e4, 0.0) == 10
    assert batches_for_gamma(10.0, 1e4, 0.5) == 1000
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert batches_for_gamma(10.0, 0.01, 0.5) == 2
    assert caught


def test_gamma_sweep_grid():
    res = gamma_sweep([0.1, 0.5], [50.0, 100.0], T=4.0, trials=3)
    assert len(res.cells) == 4
    assert {c.gamma for c in res.cells} == {0.1, 0.5}
    assert all(r["gamma"] for r in res.rows())


def test_default_workers(monkeypatch):
    monkeypatch.setenv("OLP_BATCH_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("OLP_BATCH_WORKERS", "zero")
    with pytest.raises(InvalidConfig):
        default_workers()
