"""Hindsight benchmarks: the LP relaxation optimum over all observed customers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dual import DualPrice, solve_dual_single
from .errors import InvalidConfig
from .market import SampleSet, Stream
from .policies import BatchSchedule
from .simplex import solve_lp_bounded


@dataclass(frozen=True)
class BenchmarkValue:
    value: float
    dual: DualPrice
    accepted_mass: float
    method: str  # "single-resource-pwl" or "simplex"


def _arrays(data):
    if isinstance(data, (Stream, SampleSet)):
        return data.rewards, data.consumption
    r, a = data
    r = np.asarray(r, dtype=float).reshape(-1)
    a = np.asarray(a, dtype=float)
    return r, a.reshape(-1, 1) if a.ndim == 1 else a


def offline_optimum(data, b0) -> BenchmarkValue:
    """max r.x s.t. sum a_j x_j <= b0, 0 <= x <= 1, evaluated by strong duality for m = 1."""
    r, a = _arrays(data)
    m = a.shape[1]
    b0 = np.broadcast_to(np.atleast_1d(np.asarray(b0, dtype=float)), (m,)).copy()
    n = r.shape[0]
    if n == 0:
        method = "single-resource-pwl" if m == 1 else "simplex"
        return BenchmarkValue(0.0, DualPrice(np.zeros(m), 0.0, None, degenerate=True), 0.0, method)
    if m == 1:
        dual = solve_dual_single((r, a), b0[0] / n)
        p = dual.scalar
        a1 = a[:, 0]
        value = b0[0] * p + float(np.maximum(r - a1 * p, 0.0).sum())
        if p == 0.0:
            mass = float(n)
        else:
            above = r / a1 > p
            mass = float(above.sum())
            if dual.active_breakpoint is not None:
                room = b0[0] - float(a1[above].sum())
                mass += min(max(room / a1[dual.active_breakpoint], 0.0), 1.0)
        return BenchmarkValue(value, dual, mass, "single-resource-pwl")
    sol = solve_lp_bounded((r, a), b0)
    dual = DualPrice(sol.dual_prices, sol.dual_value(r, a, b0) / n)
    return BenchmarkValue(sol.optimal_value, dual, float(sol.primal_values.sum()), "simplex")


def survivor_mask(stream: Stream, schedule: BatchSchedule) -> np.ndarray:
    """Customers whose delayed decision can still reach them."""
    if abs(schedule.T - stream.horizon) > 1e-12 * max(1.0, stream.horizon):
        raise InvalidConfig(f"schedule horizon {schedule.T:g} does not match stream horizon {stream.horizon:g}")
    cuts = schedule.cuts
    t1, T = cuts[1], cuts[-1]
    v = stream.arrival_times
    leave = v + stream.patience
    first = v <= t1
    last = v > cuts[-2]
    return ~((first & (leave <= t1)) | (last & (leave <= T)))


def filtered_benchmark(stream: Stream, b0, schedule: BatchSchedule) -> BenchmarkValue:
    """Offline optimum with expired first- and last-batch customers forced to zero."""
    keep = survivor_mask(stream, schedule)
    return offline_optimum((stream.rewards[keep], stream.consumption[keep]), b0)
