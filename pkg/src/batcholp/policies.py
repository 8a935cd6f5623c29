"""Batched online allocation policies.

Every policy reads a :class:`~batcholp.market.Stream` and an initial budget
``b0`` and returns a :class:`TrialOutcome` with the full decision trace.

Conventions shared by all policies:

* The remaining budget is ``b0`` minus the running (left-to-right) sum of
  accepted consumption, so replaying the decisions reproduces it bit for bit.
* A customer is accepted by the dual rule only if ``r_j > a_j.p`` strictly.
  For one resource this is evaluated as ``r_j / a_j > p``; the price is itself
  a ratio, so the customer that defines it is rejected exactly. For several
  resources the comparison is ``r_j - a_j.p > 1e-10 * r_scale``, which rejects
  the basic customers of an LP vertex despite rounding.
* Last-batch decisions have no capacity indicator in the algorithms; they are
  replayed in arrival order anyway and any customer that would overdraw the
  budget is rejected and counted in ``clamp_events``.
* ``last_batch="integral"`` (default) settles the last batch by the strict
  price rule alone. ``last_batch="fractional"`` also pays out the fractional
  part of the last-batch LP optimum (at most m customers get an x_j strictly
  between 0 and 1), which removes a constant O(1) rounding loss from regret.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .dual import DualPrice, PrefixDualSolver, solve_dual_single
from .errors import InvalidConfig
from .market import Bounds, SampleSet, Stream
from .simplex import solve_lp_bounded

TIE_TOL = 1e-10


@dataclass(frozen=True)
class BatchSchedule:
    """K equal batches of a horizon T; cut points t_k = k T / K."""

    T: float
    K: int
    count_based: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise InvalidConfig("K must be a positive integer")
        if not self.T > 0:
            raise InvalidConfig("horizon must be positive")
        if self.count_based and (int(self.T) != self.T or int(self.T) % self.K):
            raise InvalidConfig(f"K = {self.K} does not divide n = {self.T:g}")

    @classmethod
    def for_count(cls, n: int, K: int) -> "BatchSchedule":
        return cls(float(n), K, count_based=True)

    @property
    def B(self) -> float:
        return self.T / self.K

    @property
    def cuts(self) -> np.ndarray:
        if self.count_based:
            B = int(self.T) // self.K
            return np.arange(self.K + 1, dtype=float) * B
        cuts = self.T * np.arange(self.K + 1, dtype=float) / self.K
        cuts[-1] = self.T
        return cuts


@dataclass
class TrialOutcome:
    policy: str
    decisions: np.ndarray
    online_reward: float
    batch_prices: List[DualPrice]
    leftover: np.ndarray
    b0: np.ndarray
    batch_budgets: List[np.ndarray] = field(default_factory=list)
    clamp_events: int = 0
    rate_estimates: Optional[List[float]] = None

    @property
    def consumption_used(self) -> np.ndarray:
        return self.b0 - self.leftover

    def summary(self) -> dict:
        return {
            "policy": self.policy,
            "customers": int(self.decisions.shape[0]),
            "accepted": float(self.decisions.sum()),
            "online_reward": self.online_reward,
            "leftover": self.leftover.tolist(),
            "clamp_events": self.clamp_events,
        }

    def to_csv(self, path, stream: Stream) -> None:
        """Decision trace: one row per customer."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "arrival_time", "reward"] + [f"a_{i + 1}" for i in range(stream.m)]
                       + ["decision"])
            for j in range(len(stream)):
                w.writerow([j + 1, repr(float(stream.arrival_times[j])), repr(float(stream.rewards[j]))]
                           + [repr(float(v)) for v in stream.consumption[j]] + [repr(float(self.decisions[j]))])


def replay_budget(stream: Stream, decisions, b0) -> np.ndarray:
    """Remaining budget after each customer, recomputed one customer at a time."""
    b0 = np.atleast_1d(np.asarray(b0, dtype=float))
    used = np.zeros_like(b0)
    path = np.empty((len(stream) + 1, b0.shape[0]))
    path[0] = b0
    for j in range(len(stream)):
        if decisions[j] > 0:
            used = used + decisions[j] * stream.consumption[j]
        path[j + 1] = b0 - used
    return path


class _Budget:
    """Running consumption with an arrival-order capacity check."""

    def __init__(self, stream: Stream, b0):
        self.b0 = np.broadcast_to(np.atleast_1d(np.asarray(b0, dtype=float)), (stream.m,)).copy()
        if np.any(self.b0 <= 0):
            raise InvalidConfig("initial budget must be positive")
        self.a = stream.consumption
        self.used = np.zeros(stream.m)
        self.x = np.zeros(len(stream))
        self.clamps = 0

    @property
    def remaining(self) -> np.ndarray:
        return self.b0 - self.used

    def admit(self, idx, cand, clamp=False):
        """Accept candidates ``idx[cand]`` in order while b_{j-1} >= a_j."""
        js = idx[cand]
        if js.shape[0] == 0:
            return
        a = self.a[js]
        run = np.cumsum(np.vstack([self.used[None, :], a]), axis=0)
        fits = np.all(self.b0 - run[:-1] >= a, axis=1)
        if fits.all():
            self.x[js] = 1
            self.used = run[-1]
            return
        f = int(np.argmin(fits))
        self.x[js[:f]] = 1
        self.used = run[f]
        for j in js[f:]:
            aj = self.a[j]
            if np.all(self.b0 - self.used >= aj):
                self.x[j] = 1
                self.used = self.used + aj
            elif clamp:
                self.clamps += 1

    def settle(self, idx, shares, used_before):
        """Grant fractional shares {j: x_j} in the batch ``idx`` that started at ``used_before``."""
        if not shares:
            return
        for j, share in sorted(shares.items()):
            if self.x[j] != 0:
                continue
            # margin absorbs the rounding of the arrival-order re-sum below
            cap = float(np.min((self.b0 - self.used - 1e-12 * self.b0) / self.a[j]))
            theta = min(share, cap)
            if theta > 0:
                self.x[j] = theta
                self.used = self.used + theta * self.a[j]
        # re-sum the batch in arrival order so a replay reproduces it exactly
        steps = self.x[idx, None] * self.a[idx]
        self.used = np.cumsum(np.vstack([used_before[None, :], steps]), axis=0)[-1]


def _spent(p_max=None, m=1):
    # budget exhausted: no customer can fit, so reject everything
    cap = np.inf if p_max is None else p_max
    return DualPrice(np.full(m, cap), 0.0, None, degenerate=True)


def _prefix(solver, n, rem, denom, p_max=None):
    if rem <= 0:
        return _spent(p_max)
    return solver.solve(n, rem / denom, p_max)


def _slice(r, a, rem, denom, p_max=None):
    if rem <= 0:
        return _spent(p_max)
    return solve_dual_single((r, a), rem / denom, p_max)


LAST_BATCH_MODES = ("integral", "fractional")


def _check_last(mode):
    if mode not in LAST_BATCH_MODES:
        raise InvalidConfig(f"last_batch must be one of {LAST_BATCH_MODES}, got {mode!r}")


def _breakpoint_share(p: DualPrice, idx):
    # the one-resource LP optimum is fractional only at the breakpoint customer
    if p.active_breakpoint is None or p.scalar <= 0:
        return {}
    return {int(idx[p.active_breakpoint]): 1.0}


def _rule_single(r, a, p):
    return r / a[:, 0] > p


def _rule_multi(r, a, p, tol):
    return r - a @ p > tol


def _finish(name, stream, budget, prices, budgets, rates=None):
    reward = float(np.sum(stream.rewards * budget.x))
    return TrialOutcome(name, budget.x, reward, prices, budget.remaining, budget.b0, budgets,
                        budget.clamps, rates)


def _check_single(stream):
    if stream.m != 1:
        raise InvalidConfig(f"policy needs a single resource, stream has m = {stream.m}")


def run_alg1(stream: Stream, b0, K: int, last_batch: str = "integral") -> TrialOutcome:
    """Known n, one resource: delay the first and last batch, price middle batches online."""
    _check_single(stream)
    _check_last(last_batch)
    n = len(stream)
    if K < 2:
        raise InvalidConfig("K must be at least 2")
    sched = BatchSchedule.for_count(n, K)
    cuts = sched.cuts.astype(int)
    r, a = stream.rewards, stream.consumption
    solver = PrefixDualSolver(r, a)
    budget = _Budget(stream, b0)
    prices, budgets = [], []

    idx = np.arange(cuts[0], cuts[1])
    budgets.append(budget.remaining)
    p = solver.solve(cuts[1], budget.b0[0] / n)
    prices.append(p)
    budget.admit(idx, _rule_single(r[idx], a[idx], p.scalar))

    for k in range(2, K):
        t_prev = cuts[k - 1]
        rem = budget.remaining
        budgets.append(rem)
        p = _prefix(solver, t_prev, rem[0], n - t_prev)
        prices.append(p)
        idx = np.arange(t_prev, cuts[k])
        budget.admit(idx, _rule_single(r[idx], a[idx], p.scalar))

    t_prev = cuts[K - 1]
    rem = budget.remaining
    used_before = budget.used.copy()
    budgets.append(rem)
    idx = np.arange(t_prev, n)
    p = _slice(r[idx], a[idx], rem[0], n - t_prev)
    prices.append(p)
    budget.admit(idx, _rule_single(r[idx], a[idx], p.scalar), clamp=True)
    if last_batch == "fractional":
        budget.settle(idx, _breakpoint_share(p, idx), used_before)
    return _finish("alg1", stream, budget, prices, budgets)


def run_alg2(stream: Stream, history: Optional[SampleSet], b0, K: int,
             use_history: bool = True, last_batch: str = "integral") -> TrialOutcome:
    """Known n, m resources: the first price comes from B historical samples.

    With ``use_history=False`` the first price is computed from the first
    batch itself (decisions for that batch are then delayed to t_1).
    """
    _check_last(last_batch)
    n = len(stream)
    if K < 2:
        raise InvalidConfig("K must be at least 2")
    sched = BatchSchedule.for_count(n, K)
    cuts = sched.cuts.astype(int)
    B = cuts[1]
    r, a = stream.rewards, stream.consumption
    tol = TIE_TOL * max(1.0, float(np.abs(r).max(initial=0.0)))
    budget = _Budget(stream, b0)
    b0v = budget.b0
    prices, budgets = [], []

    lp_last = {}

    def price(rr, aa, bud, hint):
        if rr.shape[0] == 0:
            return DualPrice(np.zeros(stream.m), 0.0, None, degenerate=True)
        if np.any(bud <= 0):
            # an exhausted resource blocks every customer (all a_ij > 0)
            return _spent(None, stream.m)
        sol = solve_lp_bounded((rr, aa), bud, price_hint=hint)
        lp_last["x"] = sol.primal_values
        # objective normalised per sample, matching the single-resource solver
        d = bud / rr.shape[0]
        obj = float(d @ sol.dual_prices + np.maximum(rr - aa @ sol.dual_prices, 0.0).sum() / rr.shape[0])
        return DualPrice(sol.dual_prices, obj)

    if use_history:
        if history is None or len(history) != B:
            got = None if history is None else len(history)
            raise InvalidConfig(f"history must hold B = {B} samples, got {got}")
        if history.m != stream.m:
            raise InvalidConfig("history dimension does not match the stream")
        hr, ha = history.rewards, history.consumption
    else:
        hr, ha = r[:B], a[:B]
    budgets.append(budget.remaining)
    p = price(hr, ha, B * b0v / n, None)
    prices.append(p)
    idx = np.arange(0, B)
    budget.admit(idx, _rule_multi(r[idx], a[idx], p.price, tol))

    for k in range(2, K):
        t_prev = cuts[k - 1]
        rem = budget.remaining
        budgets.append(rem)
        p = price(r[:t_prev], a[:t_prev], t_prev * rem / (n - t_prev), p.price)
        prices.append(p)
        idx = np.arange(t_prev, cuts[k])
        budget.admit(idx, _rule_multi(r[idx], a[idx], p.price, tol))

    t_prev = cuts[K - 1]
    rem = budget.remaining
    used_before = budget.used.copy()
    budgets.append(rem)
    idx = np.arange(t_prev, n)
    lp_last.clear()
    p = price(r[idx], a[idx], rem, p.price)
    prices.append(p)
    budget.admit(idx, _rule_multi(r[idx], a[idx], p.price, tol), clamp=True)
    if last_batch == "fractional" and "x" in lp_last:
        x_lp = lp_last["x"]
        frac = np.flatnonzero((x_lp > 0) & (x_lp < 1))
        budget.settle(idx, {int(idx[i]): float(x_lp[i]) for i in frac}, used_before)
    return _finish("alg2" if use_history else "alg2-nohistory", stream, budget, prices, budgets)


def _poisson_policy(name, stream, b0, K, bounds: Bounds, known_rate=None, impatient=False,
                    last_batch="integral"):
    _check_single(stream)
    _check_last(last_batch)
    if K < 2:
        raise InvalidConfig("K must be at least 2")
    T = stream.horizon
    cuts = BatchSchedule(T, K).cuts
    counts = np.searchsorted(stream.arrival_times, cuts, side="right")
    counts[0] = 0
    r, a = stream.rewards, stream.consumption
    alive = stream.arrival_times + stream.patience
    p_max = bounds.price_cap
    solver = PrefixDualSolver(r, a)
    budget = _Budget(stream, b0)
    b0s = budget.b0[0]
    prices, budgets, rates = [], [], []

    def rate(k):
        return known_rate if known_rate is not None else (counts[k] + 1) / cuts[k]

    lam = rate(1)
    rates.append(lam)
    budgets.append(budget.remaining)
    p = solver.solve(int(counts[1]), b0s / (lam * T), p_max)
    prices.append(p)
    idx = np.arange(0, counts[1])
    cand = _rule_single(r[idx], a[idx], p.scalar)
    if impatient:
        cand &= alive[idx] > cuts[1]
    budget.admit(idx, cand)

    for k in range(2, K):
        lam = rate(k - 1)
        rates.append(lam)
        rem = budget.remaining
        budgets.append(rem)
        n_samples = counts[k] if known_rate is not None else counts[k - 1]
        p = _prefix(solver, int(n_samples), rem[0], lam * (T - cuts[k - 1]), p_max)
        prices.append(p)
        idx = np.arange(counts[k - 1], counts[k])
        budget.admit(idx, _rule_single(r[idx], a[idx], p.scalar))

    rem = budget.remaining
    used_before = budget.used.copy()
    budgets.append(rem)
    idx = np.arange(counts[K - 1], counts[K])
    if impatient:
        idx = idx[alive[idx] > T]
    if idx.shape[0]:
        p = _slice(r[idx], a[idx], rem[0], idx.shape[0], p_max)
    else:
        p = DualPrice(np.zeros(1), 0.0, None, degenerate=True)
    prices.append(p)
    budget.admit(idx, _rule_single(r[idx], a[idx], p.scalar), clamp=True)
    if last_batch == "fractional" and idx.shape[0]:
        budget.settle(idx, _breakpoint_share(p, idx), used_before)
    return _finish(name, stream, budget, prices, budgets, rates)


def run_alg3(stream: Stream, b0, K: int, bounds: Bounds, last_batch: str = "integral") -> TrialOutcome:
    """Poisson arrivals with unknown rate; prices boxed to [0, r_bar / d_lower]."""
    return _poisson_policy("alg3", stream, b0, K, bounds, last_batch=last_batch)


def run_alg3_known_rate(stream: Stream, b0, K: int, rate: float, bounds: Bounds,
                        last_batch: str = "integral") -> TrialOutcome:
    """Known rate, and middle batches priced on data up to their own end."""
    if not rate > 0:
        raise InvalidConfig("rate must be positive")
    return _poisson_policy("alg3-known-rate", stream, b0, K, bounds, known_rate=rate, last_batch=last_batch)


def run_alg4(stream: Stream, b0, K: int, bounds: Bounds, last_batch: str = "integral") -> TrialOutcome:
    """Poisson arrivals with impatience: delayed customers who left are rejected.

    Expired first-batch customers still enter the first price; expired
    last-batch customers are dropped from the last-batch problem.
    """
    return _poisson_policy("alg4", stream, b0, K, bounds, impatient=True, last_batch=last_batch)


def run_ahdla_baseline(stream: Stream, b0) -> TrialOutcome:
    """Re-price before every customer from all earlier customers (no batching)."""
    _check_single(stream)
    n = len(stream)
    r, a = stream.rewards, stream.consumption
    solver = PrefixDualSolver(r, a)
    budget = _Budget(stream, b0)
    prices = []
    first = np.array([0])
    budget.admit(first, np.array([r[0] > 0]))
    for j in range(1, n):
        rem = budget.remaining[0]
        p = _prefix(solver, j, rem, n - j)
        prices.append(p)
        if r[j] / a[j, 0] > p.scalar and rem >= a[j, 0]:
            budget.x[j] = 1
            budget.used = budget.used + a[j]
    return _finish("ahdla", stream, budget, prices, [])
