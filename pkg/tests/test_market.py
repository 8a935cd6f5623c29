import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from batcholp.errors import InvalidConfig
from batcholp.market import (Bounds, Deterministic, Exponential, MarketSpec, Uniform, attach_impatience,
                             make_rng, parse_law, sample_history, sample_stream_fixed, sample_stream_poisson,
                             samples_from_csv, stream_from_csv, stream_to_csv, uniform_market)


def test_fixed_stream_support_and_times():
    s = sample_stream_fixed(uniform_market(1), 3, seed=42)
    assert len(s) == 3
    assert np.all((s.rewards >= 1) & (s.rewards <= 19))
    assert np.all((s.consumption >= 1) & (s.consumption <= 19))
    assert np.array_equal(s.arrival_times, [1.0, 2.0, 3.0])
    assert np.all(np.isinf(s.patience))


def test_determinism():
    a = sample_stream_poisson(uniform_market(2), 3.0, 20.0, seed=5, stream_id=9)
    b = sample_stream_poisson(uniform_market(2), 3.0, 20.0, seed=5, stream_id=9)
    assert np.array_equal(a.arrival_times, b.arrival_times)
    assert np.array_equal(a.rewards, b.rewards)
    assert np.array_equal(a.consumption, b.consumption)
    c = sample_stream_poisson(uniform_market(2), 3.0, 20.0, seed=5, stream_id=10)
    assert not np.array_equal(a.rewards[:5], c.rewards[:5])


def test_marks_are_prefix_consistent():
    long = sample_stream_fixed(uniform_market(3), 50, seed=1, stream_id=2)
    short = sample_stream_fixed(uniform_market(3), 20, seed=1, stream_id=2)
    assert np.array_equal(long.rewards[:20], short.rewards)
    assert np.array_equal(long.consumption[:20], short.consumption)


def test_reward_mean_large_sample():
    s = sample_stream_fixed(uniform_market(1), 10**6, seed=3)
    assert abs(s.rewards.mean() - 10.0) < 0.05


def test_poisson_count_mean_and_variance():
    counts = np.array([len(sample_stream_poisson(uniform_market(1), 10.0, 128.0, seed=0, stream_id=i))
                       for i in range(10_000)])
    assert abs(counts.mean() - 1280) < 15
    assert abs(counts.var(ddof=1) - 1280) < 60


def test_vanishing_horizon():
    sizes = [len(sample_stream_poisson(uniform_market(1), 1.0, 1e-9, seed=0, stream_id=i)) for i in range(200)]
    assert sum(sizes) == 0


def test_poisson_times_in_horizon():
    s = sample_stream_poisson(uniform_market(1), 50.0, 7.0, seed=11)
    assert np.all(np.diff(s.arrival_times) > 0)
    assert s.arrival_times[0] > 0 and s.arrival_times[-1] <= 7.0
    assert s.count_until(3.5) == int(np.sum(s.arrival_times <= 3.5))


def test_conditional_uniform_rule():
    # given arrival in (0, B], arrival times are uniform on (0, B)
    B = 0.5
    times = []
    for i in range(420):
        s = sample_stream_poisson(uniform_market(1), 500.0, 1.0, seed=8, stream_id=i)
        times.append(s.arrival_times[s.arrival_times <= B])
    v = np.concatenate(times)[:100_000] / B
    assert v.shape[0] == 100_000
    assert stats.kstest(v, "uniform").pvalue > 0.01


def test_thinning_consistency():
    # keep each arrival with probability q; gaps look like a q * rate process
    q, rate = 0.3, 20.0
    gaps_thin, gaps_direct = [], []
    for i in range(60):
        s = sample_stream_poisson(uniform_market(1), rate, 100.0, seed=4, stream_id=i)
        keep = make_rng(99, i, "marks").random(len(s)) < q
        gaps_thin.append(np.diff(np.concatenate([[0.0], s.arrival_times[keep]])))
        d = sample_stream_poisson(uniform_market(1), q * rate, 100.0, seed=5, stream_id=i)
        gaps_direct.append(np.diff(np.concatenate([[0.0], d.arrival_times])))
    assert stats.ks_2samp(np.concatenate(gaps_thin), np.concatenate(gaps_direct)).pvalue > 0.01


def test_exponential_impatience():
    spec = uniform_market(1, impatience=Exponential(1.0))
    s = sample_stream_fixed(spec, 10**6, seed=2)
    w = attach_impatience(s, spec, seed=2).patience
    assert abs(np.mean(w <= 1.0) - (1 - math.exp(-1))) < 0.002


def test_infinite_patience_law():
    spec = uniform_market(1, impatience=Deterministic(math.inf))
    s = attach_impatience(sample_stream_fixed(spec, 100, seed=0), spec, seed=0)
    assert np.all(np.isinf(s.patience))


def test_missing_impatience_law():
    with pytest.raises(InvalidConfig):
        attach_impatience(sample_stream_fixed(uniform_market(1), 5, 0), uniform_market(1), 0)


def test_history_support_and_independence():
    h = sample_history(uniform_market(1), 640, seed=1)
    assert len(h) == 640 and h.rewards.min() >= 1 and h.rewards.max() <= 19
    assert len(sample_history(uniform_market(1), 1, seed=1)) == 1
    big = sample_history(uniform_market(1), 10**5, seed=1, stream_id=0)
    s = sample_stream_fixed(uniform_market(1), 10**5, seed=1, stream_id=0)
    assert abs(np.corrcoef(big.rewards, s.rewards)[0, 1]) < 0.01
    with pytest.raises(InvalidConfig):
        sample_history(uniform_market(1), 0, seed=1)


def test_uniform_realisation():
    law = Uniform(1.0, 19.0)
    assert law.from_uniform(np.array([0.0, 0.5]))[1] == 10.0
    assert law.from_uniform(np.array([0.0]))[0] == 1.0


@given(st.integers(1, 4), st.integers(1, 200), st.integers(0, 2**63 - 1), st.integers(0, 2**40))
def test_support_invariants(m, n, seed, stream_id):
    spec = uniform_market(m, impatience=Exponential(2.0))
    s = attach_impatience(sample_stream_fixed(spec, n, seed, stream_id), spec, seed, stream_id)
    s.samples.validate(spec)
    assert np.all(s.patience >= 0)


def test_spec_validation():
    with pytest.raises(InvalidConfig):
        MarketSpec(1, Uniform(1, 30), Uniform(1, 19), Bounds(19, 19, 1, 1, 9))
    with pytest.raises(InvalidConfig):
        MarketSpec(1, Uniform(1, 19), Uniform(0.5, 19), Bounds(19, 19, 1, 1, 9))
    with pytest.raises(InvalidConfig):
        Bounds(19, 19, 1, 5, 5)
    spec = uniform_market(2)
    spec.check_initial_average([5, 5])
    with pytest.raises(InvalidConfig):
        spec.check_initial_average([5, 9])


def test_parse_law():
    assert parse_law("uniform(1, 19)") == Uniform(1.0, 19.0)
    assert parse_law("exp(2)") == Exponential(2.0)
    assert parse_law("det(inf)") == Deterministic(math.inf)
    with pytest.raises(InvalidConfig):
        parse_law("gamma(1,2)")


def test_csv_round_trip(tmp_path):
    spec = uniform_market(2, impatience=Exponential(1.0))
    s = attach_impatience(sample_stream_poisson(spec, 5.0, 4.0, seed=3), spec, seed=3)
    path = tmp_path / "s.csv"
    stream_to_csv(s, path)
    back = stream_from_csv(path, horizon=4.0, kind="poisson", rate=5.0)
    assert np.array_equal(back.rewards, s.rewards)
    assert np.array_equal(back.consumption, s.consumption)
    assert np.array_equal(back.arrival_times, s.arrival_times)
    assert np.array_equal(back.patience, s.patience)
    samples = samples_from_csv(path)
    assert np.array_equal(samples.consumption, s.consumption)
