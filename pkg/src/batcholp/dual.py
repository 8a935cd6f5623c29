"""Dual-price subproblem: min_{p >= 0} d.p + (1/N) sum_j (r_j - a_j.p)^+.

For one resource the objective is convex piecewise linear with breakpoints at
the ratios rho_j = r_j / a_j. Its right slope at p is ``N d - sum_{rho_j > p} a_j``,
so walking the ratios in descending order and stopping where the cumulative
consumption first reaches ``N d`` lands on the optimum. When the minimiser is
an interval this prefix rule returns its upper endpoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit
from scipy import integrate

from .errors import InvalidInput, UnsupportedSpec
from .market import Deterministic, MarketSpec, SampleSet, Uniform


@dataclass(frozen=True)
class DualPrice:
    price: np.ndarray
    objective: float
    active_breakpoint: Optional[int] = None
    degenerate: bool = False

    @property
    def scalar(self) -> float:
        return float(self.price[0])


def _as_arrays(samples):
    if isinstance(samples, SampleSet):
        return samples.rewards, samples.consumption
    r, a = samples
    r = np.asarray(r, dtype=float).reshape(-1)
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    return r, a


def dual_objective(samples, d, p) -> float:
    """d.p + mean_j (r_j - a_j.p)^+."""
    r, a = _as_arrays(samples)
    d = np.atleast_1d(np.asarray(d, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if d.shape != (a.shape[1],) or p.shape != (a.shape[1],) or a.shape[0] != r.shape[0]:
        raise InvalidInput(
            f"dimension mismatch: rewards {r.shape}, consumption {a.shape}, d {d.shape}, p {p.shape}"
        )
    if r.shape[0] == 0:
        raise InvalidInput("dual objective of an empty sample set")
    lin = float(d @ p)
    if a.shape[1] == 1:
        excess = r - a[:, 0] * p[0]
    else:
        excess = r - a @ p
    return lin + float(np.maximum(excess, 0.0).sum()) / r.shape[0]


def _objective_1d(r, a, d, p):
    # same arithmetic as dual_objective for m = 1
    return d * p + float(np.maximum(r - a * p, 0.0).sum()) / r.shape[0]


def solve_dual_single(samples, d: float, p_max: Optional[float] = None) -> DualPrice:
    """Exact minimiser over [0, p_max] of the one-resource dual objective.

    Empty sample sets return p = 0 with ``degenerate=True``.
    """
    r, a = _as_arrays(samples)
    if a.shape[1] != 1:
        raise InvalidInput(f"solve_dual_single needs m = 1, got m = {a.shape[1]}")
    a = a[:, 0]
    if not d > 0:
        raise InvalidInput("d must be positive")
    if p_max is not None and not p_max > 0:
        raise InvalidInput("p_max must be positive")
    n = r.shape[0]
    if n == 0:
        return DualPrice(np.zeros(1), 0.0, None, degenerate=True)
    if np.any(a <= 0):
        raise InvalidInput("consumption must be positive")
    rho = r / a
    order = np.argsort(-rho, kind="stable")
    cum = np.cumsum(a[order])
    target = n * d
    if cum[-1] < target:
        p, bp = 0.0, None
    else:
        q = int(np.searchsorted(cum, target, side="left"))
        bp = int(order[q])
        p = float(rho[bp])
    if p_max is not None and p > p_max:
        p, bp = float(p_max), None
    return DualPrice(np.array([p]), _objective_1d(r, a, d, p), bp)


@njit(cache=True)
def _fenwick_insert(tree_a, tree_r, ranks, a, r):
    size = tree_a.shape[0] - 1
    for k in range(ranks.shape[0]):
        i = ranks[k] + 1
        while i <= size:
            tree_a[i] += a[k]
            tree_r[i] += r[k]
            i += i & (-i)


@njit(cache=True)
def _fenwick_prefix(tree, count):
    total = 0.0
    i = count
    while i > 0:
        total += tree[i]
        i -= i & (-i)
    return total


@njit(cache=True)
def _fenwick_crossing(tree_a, tree_r, target):
    """Largest q with (consumption of sorted positions < q) < target, plus the sums over them."""
    size = tree_a.shape[0] - 1
    step = 1
    while step * 2 <= size:
        step *= 2
    pos = 0
    acc_a = 0.0
    acc_r = 0.0
    while step > 0:
        nxt = pos + step
        if nxt <= size and acc_a + tree_a[nxt] < target:
            pos = nxt
            acc_a += tree_a[nxt]
            acc_r += tree_r[nxt]
        step //= 2
    return pos, acc_a, acc_r


class PrefixDualSolver:
    """Repeated single-resource solves over growing arrival-order prefixes.

    The ratios of the whole stream are sorted once (stable, descending) and a
    Fenwick tree over sorted positions holds the consumption and reward of the
    customers included so far. A solve finds the position where cumulative
    consumption first reaches ``n d`` by binary lifting, so adding a batch and
    solving both cost O(log N). Prices match ``solve_dual_single`` except when
    the cumulative consumption meets ``n d`` to within rounding, where both
    answers minimise the objective to rounding.
    """

    def __init__(self, rewards, consumption):
        r, a = _as_arrays((rewards, consumption))
        if a.shape[1] != 1:
            raise InvalidInput("PrefixDualSolver needs m = 1")
        if np.any(a <= 0):
            raise InvalidInput("consumption must be positive")
        self.r = r
        self.a = a[:, 0]
        rho = self.r / self.a
        self.order = np.argsort(-rho, kind="stable")
        self.rho_sorted = rho[self.order]
        self.rank = np.empty_like(self.order)
        self.rank[self.order] = np.arange(self.order.shape[0])
        self._reset()

    def _reset(self):
        size = self.r.shape[0]
        self._tree_a = np.zeros(size + 1)
        self._tree_r = np.zeros(size + 1)
        self._n = 0

    def _activate(self, n):
        if n < self._n:
            self._reset()
        if n > self._n:
            _fenwick_insert(self._tree_a, self._tree_r, self.rank[self._n:n],
                            self.a[self._n:n], self.r[self._n:n])
            self._n = n

    def solve(self, n: int, d: float, p_max: Optional[float] = None) -> DualPrice:
        if not d > 0:
            raise InvalidInput("d must be positive")
        if n <= 0:
            return DualPrice(np.zeros(1), 0.0, None, degenerate=True)
        if n > self.r.shape[0]:
            raise InvalidInput(f"prefix {n} longer than the {self.r.shape[0]} samples held")
        self._activate(n)
        size = self.r.shape[0]
        q, sum_a, sum_r = _fenwick_crossing(self._tree_a, self._tree_r, n * d)
        if q >= size:
            p, bp = 0.0, None
        else:
            p, bp = float(self.rho_sorted[q]), int(self.order[q])
        if p_max is not None and p > p_max:
            p, bp = float(p_max), None
            above = int(np.searchsorted(-self.rho_sorted, -p, side="left"))
            sum_a = _fenwick_prefix(self._tree_a, above)
            sum_r = _fenwick_prefix(self._tree_r, above)
        objective = d * p + (sum_r - p * sum_a) / n
        return DualPrice(np.array([p]), objective, bp)


# --------------------------------------------------------------------------
# population dual price


def _survival(law, x):
    """P{r > x} for the reward law."""
    if isinstance(law, Deterministic):
        return 1.0 if law.value > x else 0.0
    lo, hi = law.lo, law.hi
    if x < lo:
        return 1.0
    if x >= hi:
        return 0.0
    return (hi - x) / (hi - lo)


def _expected_excess(law, x):
    """E[(r - x)^+] for the reward law."""
    if isinstance(law, Deterministic):
        return max(law.value - x, 0.0)
    lo, hi = law.lo, law.hi
    if hi == lo:
        return max(lo - x, 0.0)
    if x <= lo:
        return 0.5 * (lo + hi) - x
    if x >= hi:
        return 0.0
    return (hi - x) ** 2 / (2.0 * (hi - lo))


def _against_consumption(a_law, func, kinks, tol):
    """E_a[func(a)] for a uniform or point-mass consumption law."""
    if isinstance(a_law, Deterministic):
        return func(a_law.value)
    lo, hi = a_law.lo, a_law.hi
    if hi == lo:
        return func(lo)
    pts = sorted({k for k in kinks if lo < k < hi})
    edges = [lo] + pts + [hi]
    total = 0.0
    for x0, x1 in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(func, x0, x1, epsabs=tol, epsrel=0.0, limit=200)
        total += val
    return total / (hi - lo)


def _check_family(spec: MarketSpec):
    if spec.m != 1:
        raise UnsupportedSpec("population dual is implemented for m = 1 only")
    laws = (spec.reward_law,) + spec.consumption_laws
    if not all(isinstance(law, (Uniform, Deterministic)) for law in laws):
        raise UnsupportedSpec("population dual supports independent Uniform / Deterministic laws only")


def accepted_consumption(spec: MarketSpec, p: float, tol: float = 1e-10) -> float:
    """E[a 1{r > a p}]; the dual objective's right slope is d minus this."""
    _check_family(spec)
    r_law, a_law = spec.reward_law, spec.consumption_laws[0]
    kinks = [v / p for v in r_law.support] if p > 0 else []
    return _against_consumption(a_law, lambda a: a * _survival(r_law, a * p), kinks, tol)


def expected_dual_objective(spec: MarketSpec, d: float, p: float, tol: float = 1e-10) -> float:
    """d p + E[(r - a p)^+]."""
    _check_family(spec)
    r_law, a_law = spec.reward_law, spec.consumption_laws[0]
    kinks = [v / p for v in r_law.support] if p > 0 else []
    return d * p + _against_consumption(a_law, lambda a: _expected_excess(r_law, a * p), kinks, tol)


def population_dual(spec: MarketSpec, d: float, tol: float = 1e-10, xtol: float = 1e-11) -> DualPrice:
    """argmin_{p >= 0} d p + E[(r - a p)^+] by bisection on the right slope."""
    _check_family(spec)
    if not d > 0:
        raise InvalidInput("d must be positive")

    def slope(p):
        return d - accepted_consumption(spec, p, tol)

    if slope(0.0) >= 0:
        return DualPrice(np.zeros(1), expected_dual_objective(spec, d, 0.0, tol))
    lo, hi = 0.0, spec.bounds.r_bar / spec.bounds.a_lower
    if slope(hi) < 0:
        # cannot happen when r <= r_bar and a >= a_lower
        raise UnsupportedSpec("slope still negative at r_bar / a_lower; bounds inconsistent with laws")
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if slope(mid) < 0:
            lo = mid
        else:
            hi = mid
    return DualPrice(np.array([hi]), expected_dual_objective(spec, d, hi, tol))


def population_dual_slope(spec: MarketSpec, d: float, h: float = 1e-4) -> float:
    """Central finite-difference estimate of dp*/dd."""
    up = population_dual(spec, d + h).scalar
    dn = population_dual(spec, d - h).scalar
    return (up - dn) / (2.0 * h)


__all__ = [
    "DualPrice",
    "PrefixDualSolver",
    "accepted_consumption",
    "dual_objective",
    "expected_dual_objective",
    "population_dual",
    "population_dual_slope",
    "solve_dual_single",
]
