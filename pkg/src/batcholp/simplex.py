"""Bounded-variable revised simplex for the packing LP

    max  sum_j r_j x_j   s.t.  sum_j a_j x_j <= b,  0 <= x_j <= 1.

The basis has one row per resource, so it is a dense m x m matrix whose
explicit inverse is updated by elementary row operations and recomputed from
scratch every ``REFRESH`` pivots. Pivot selection follows Bland's rule, meaning
smallest index first, against a fixed variable ordering; any ordering
guarantees termination, and ranking customers by a price hint makes the
smallest-index choice a good one.

Cold starts run the primal simplex from a greedy crash with the slack basis.
Warm starts (``price_hint`` given) build a dual-feasible basis from the
customers whose reduced cost under the hint is nearest zero and run the dual
simplex, which needs roughly one pivot per customer the hint misclassifies.
A primal pass always finishes the solve, so a loose hint costs time, never
correctness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .errors import InvalidInput, SolverFailure
from .market import SampleSet

REFRESH = 50


@dataclass(frozen=True)
class LpSolution:
    primal_values: np.ndarray
    dual_prices: np.ndarray
    optimal_value: float
    fractional_count: int
    iterations: int = 0

    def dual_value(self, rewards, consumption, budget) -> float:
        """budget.p + sum_j (r_j - a_j.p)^+ at the returned prices."""
        excess = np.asarray(rewards) - np.asarray(consumption) @ self.dual_prices
        return float(np.asarray(budget) @ self.dual_prices + np.maximum(excess, 0.0).sum())

    @property
    def accepted(self) -> np.ndarray:
        return self.primal_values >= 1.0


@njit(cache=True)
def _column_into(A, j, out):
    m, n = A.shape
    if j < n:
        for i in range(m):
            out[i] = A[i, j]
    else:
        for i in range(m):
            out[i] = 0.0
        out[j - n] = 1.0


@njit(cache=True)
def _refresh_kernel(A, b, basis, at_upper, binv, xb):
    m, n = A.shape
    bmat = np.empty((m, m))
    col = np.empty(m)
    rhs = b.copy()
    basic = np.zeros(n, dtype=np.bool_)
    for p in range(m):
        _column_into(A, basis[p], col)
        bmat[:, p] = col
        if basis[p] < n:
            basic[basis[p]] = True
    for j in range(n):
        if at_upper[j] and not basic[j]:
            for i in range(m):
                rhs[i] -= A[i, j]
    binv[:, :] = np.linalg.inv(bmat)
    xb[:] = binv @ rhs


@njit(cache=True)
def _pivot_kernel(binv, pos, alpha):
    m = binv.shape[0]
    prow = binv[pos] / alpha[pos]
    for p in range(m):
        if p != pos:
            binv[p] -= alpha[p] * prow
    binv[pos] = prow


@njit(cache=True)
def _prices(c, binv, basis, n):
    m = binv.shape[0]
    pi = np.zeros(m)
    for p in range(m):
        if basis[p] < n:
            pi += c[basis[p]] * binv[p]
    return pi


@njit(cache=True)
def _infeasibility(xb, basis, n):
    worst = 0.0
    for p in range(xb.shape[0]):
        worst = max(worst, -xb[p])
        if basis[p] < n:
            worst = max(worst, xb[p] - 1.0)
    return worst


@njit(cache=True)
def _primal_kernel(c, A, b, basis, at_upper, binv, xb, ctr, d_tol, piv_tol, feas_tol, check):
    """Primal simplex with Bland's rule. Returns 0 optimal, 1 limit, 3 unbounded, 4 infeasible."""
    m, n = A.shape
    is_basic = np.zeros(n + m, dtype=np.bool_)
    for p in range(m):
        is_basic[basis[p]] = True
    alpha = np.empty(m)
    col = np.empty(m)
    while True:
        pi = _prices(c, binv, basis, n)
        enter = -1
        for j in range(n):
            if is_basic[j]:
                continue
            red = c[j]
            for i in range(m):
                red -= pi[i] * A[i, j]
            if (at_upper[j] and red < -d_tol) or (not at_upper[j] and red > d_tol):
                enter = j
                break
        if enter < 0:
            for i in range(m):
                if not is_basic[n + i] and -pi[i] > d_tol:
                    enter = n + i
                    break
        if enter < 0:
            return 0
        ctr[0] += 1
        if ctr[0] > ctr[2]:
            return 1
        from_upper = enter < n and at_upper[enter]
        sigma = -1.0 if from_upper else 1.0
        _column_into(A, enter, col)
        alpha[:] = binv @ col
        t_min = np.inf
        pos = -1
        to_up = False
        for p in range(m):
            step = sigma * alpha[p]
            if step > piv_tol:
                t = max(xb[p], 0.0) / step
                up_bound = False
            elif step < -piv_tol and basis[p] < n:
                t = max(1.0 - xb[p], 0.0) / (-step)
                up_bound = True
            else:
                continue
            if t < t_min or (t == t_min and basis[p] < basis[pos]):
                t_min = t
                pos = p
                to_up = up_bound
        t_flip = 1.0 if enter < n else np.inf
        if t_flip <= t_min:
            if not np.isfinite(t_flip):
                return 3
            xb -= t_flip * sigma * alpha
            at_upper[enter] = not at_upper[enter]
            continue
        xb -= t_min * sigma * alpha
        value = (1.0 if from_upper else 0.0) + sigma * t_min
        if enter < n:
            at_upper[enter] = False
        leaving = basis[pos]
        if leaving < n:
            at_upper[leaving] = to_up
        is_basic[leaving] = False
        is_basic[enter] = True
        _pivot_kernel(binv, pos, alpha)
        basis[pos] = enter
        ctr[1] += 1
        if ctr[1] >= REFRESH:
            _refresh_kernel(A, b, basis, at_upper, binv, xb)
            ctr[1] = 0
            if check and _infeasibility(xb, basis, n) > feas_tol:
                return 4
        else:
            xb[pos] = value


@njit(cache=True)
def _dual_kernel(c, A, b, basis, at_upper, binv, xb, ctr, d_tol, piv_tol, feas_tol):
    """Dual simplex with a bound-flipping ratio test. Returns 0 feasible, 1 limit, 2 stuck."""
    m, n = A.shape
    is_basic = np.zeros(n + m, dtype=np.bool_)
    for p in range(m):
        is_basic[basis[p]] = True
    cand_idx = np.empty(n + m, dtype=np.int64)
    cand_ratio = np.empty(n + m)
    cand_width = np.empty(n + m)
    alpha = np.empty(m)
    col = np.empty(m)
    shift = np.empty(m)
    while True:
        # leaving row: smallest basis index among infeasible rows
        pos = -1
        for p in range(m):
            ub = 1.0 if basis[p] < n else np.inf
            if xb[p] < -feas_tol or xb[p] > ub + feas_tol:
                if pos < 0 or basis[p] < basis[pos]:
                    pos = p
        if pos < 0:
            return 0
        ctr[0] += 1
        if ctr[0] > ctr[2]:
            return 1
        increase = xb[pos] < -feas_tol
        pi = _prices(c, binv, basis, n)
        row = binv[pos]
        k = 0
        for j in range(n):
            if is_basic[j]:
                continue
            rs = 0.0
            red = c[j]
            for i in range(m):
                rs += row[i] * A[i, j]
                red -= pi[i] * A[i, j]
            # moving x_j by delta changes x_B[pos] by -rs delta
            if increase:
                ok = rs > piv_tol if at_upper[j] else rs < -piv_tol
            else:
                ok = rs < -piv_tol if at_upper[j] else rs > piv_tol
            if ok:
                cand_idx[k] = j
                cand_ratio[k] = abs(red) / abs(rs)
                cand_width[k] = abs(rs)
                k += 1
        for i in range(m):
            if is_basic[n + i]:
                continue
            rk = row[i]
            ok = rk < -piv_tol if increase else rk > piv_tol
            if ok:
                cand_idx[k] = n + i
                cand_ratio[k] = abs(pi[i]) / abs(rk)
                cand_width[k] = np.inf
                k += 1
        if k == 0:
            return 2
        order = np.argsort(cand_ratio[:k], kind="mergesort")
        # pass boxed breakpoints while the dual slope stays positive
        slope = abs(xb[pos]) if increase else xb[pos] - 1.0
        stop = k - 1
        for q in range(k):
            slope -= cand_width[order[q]]
            if slope <= 0:
                stop = q
                break
        if stop > 0:
            shift[:] = 0.0
            for q in range(stop):
                j = cand_idx[order[q]]
                sign = 1.0 if at_upper[j] else -1.0
                at_upper[j] = not at_upper[j]
                for i in range(m):
                    shift[i] += sign * A[i, j]
            xb += binv @ shift
        enter = cand_idx[order[stop]]
        leaving = basis[pos]
        target = 0.0 if increase else 1.0
        start = 1.0 if (enter < n and at_upper[enter]) else 0.0
        _column_into(A, enter, col)
        alpha[:] = binv @ col
        delta = (xb[pos] - target) / alpha[pos]
        if leaving < n:
            at_upper[leaving] = not increase
        if enter < n:
            at_upper[enter] = False
        xb -= delta * alpha
        is_basic[leaving] = False
        is_basic[enter] = True
        _pivot_kernel(binv, pos, alpha)
        basis[pos] = enter
        ctr[1] += 1
        if ctr[1] >= REFRESH:
            _refresh_kernel(A, b, basis, at_upper, binv, xb)
            ctr[1] = 0
        else:
            xb[pos] = start + delta


class _BoundedSimplex:
    """State of one solve; variables 0..n-1 are customers (permuted), n..n+m-1 slacks."""

    def __init__(self, c, A, b, max_iter, feas_tol):
        self.c = np.ascontiguousarray(c, dtype=float)
        self.A = np.ascontiguousarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.m, self.n = A.shape
        self.d_tol = 1e-11 * max(float(np.abs(c).max()), 1.0)
        self.piv_tol = 1e-11
        self.feas_tol = feas_tol * max(1.0, float(np.abs(b).max()))
        limit = max_iter if max_iter is not None else 50 * (self.n + self.m) + 1000
        # iterations, pivots since refresh, iteration limit
        self.ctr = np.array([0, 0, limit], dtype=np.int64)
        self.at_upper = np.zeros(self.n, dtype=bool)
        self.basis = np.arange(self.n, self.n + self.m, dtype=np.int64)
        self.binv = np.eye(self.m)
        self.xb = self.b.copy()

    @property
    def iterations(self) -> int:
        return int(self.ctr[0])

    def column(self, j):
        if j < self.n:
            return self.A[:, j]
        e = np.zeros(self.m)
        e[j - self.n] = 1.0
        return e

    def basic_mask(self):
        mask = np.zeros(self.n + self.m, dtype=bool)
        mask[self.basis] = True
        return mask

    def basis_costs(self):
        cb = np.zeros(self.m)
        s = self.basis < self.n
        cb[s] = self.c[self.basis[s]]
        return cb

    def refresh(self):
        _refresh_kernel(self.A, self.b, self.basis, self.at_upper, self.binv, self.xb)
        self.ctr[1] = 0

    def infeasibility(self):
        return float(_infeasibility(self.xb, self.basis, self.n))

    def reduced_costs(self):
        pi = self.basis_costs() @ self.binv
        return pi, self.c - pi @ self.A

    def _fail(self, code, phase):
        info = {"iterations": self.iterations, "n": self.n, "m": self.m, "phase": phase,
                "violation": self.infeasibility()}
        messages = {1: "simplex iteration limit reached", 2: "dual simplex found no entering variable",
                    3: "unbounded direction in a bounded LP", 4: "loss of primal feasibility"}
        raise SolverFailure(messages[code], info)

    def primal(self):
        code = _primal_kernel(self.c, self.A, self.b, self.basis, self.at_upper, self.binv, self.xb,
                              self.ctr, self.d_tol, self.piv_tol, self.feas_tol, True)
        if code:
            self._fail(code, "primal")

    def dual(self):
        """Restore primal feasibility while keeping reduced costs sign-correct."""
        code = _dual_kernel(self.c, self.A, self.b, self.basis, self.at_upper, self.binv, self.xb,
                            self.ctr, self.d_tol, self.piv_tol, self.feas_tol)
        if code:
            self._fail(code, "dual")

    # starts ----------------------------------------------------------------

    def cold_start(self, score):
        rem = self.b.copy()
        for k in np.flatnonzero(score > 0):
            col = self.A[:, k]
            if np.all(col <= rem):
                self.at_upper[k] = True
                rem = rem - col
        self.refresh()

    def warm_start(self, score, hint):
        """Basis from near-marginal customers; falls back to a cold start if not dual feasible."""
        n, m = self.n, self.m
        chosen = [n + i for i in range(m) if hint[i] <= 0]
        need = m - len(chosen)
        if need:
            # greedy well-conditioned basis: keep a column only if it is far from the span so far
            q = [self.column(j) for j in chosen]
            for k in np.argsort(np.abs(score), kind="stable"):
                if len(chosen) == m:
                    break
                col = self.A[:, k]
                res = col.copy()
                for u in q:
                    res -= (u @ res) * u
                norm = float(np.sqrt(res @ res))
                if norm > 1e-4 * float(np.sqrt(col @ col)):
                    q.append(res / norm)
                    chosen.append(int(k))
            if len(chosen) < m:
                return False
        self.basis = np.array(chosen, dtype=np.int64)
        self.binv = np.linalg.inv(np.column_stack([self.column(j) for j in self.basis]))
        pi, red = self.reduced_costs()
        basic = self.basic_mask()
        slack_nb = ~basic[n:]
        if np.any(pi[slack_nb] < -self.d_tol):
            return False
        self.at_upper = (red > 0) & ~basic[:n]
        self.refresh()
        return True

    def solution(self):
        self.refresh()
        worst = self.infeasibility()
        if worst > self.feas_tol:
            raise SolverFailure("loss of primal feasibility",
                                {"iterations": self.iterations, "violation": worst})
        x = self.at_upper.astype(float)
        s = self.basis < self.n
        x[self.basis[s]] = np.clip(self.xb[s], 0.0, 1.0)
        pi = np.maximum(self.basis_costs() @ self.binv, 0.0)
        return x, pi


def _solve_core(r, a, b, hint, max_iter, feas_tol):
    n = r.shape[0]
    if hint is not None:
        score = r - a @ hint
    else:
        score = r / (a / b).sum(axis=1)
    order = np.argsort(-score, kind="stable")
    lp = _BoundedSimplex(r[order], a[order].T.copy(), b, max_iter, feas_tol)
    if hint is not None and lp.warm_start(score[order], hint):
        lp.dual()
    else:
        lp = _BoundedSimplex(r[order], a[order].T.copy(), b, max_iter, feas_tol)
        lp.cold_start(score[order] if hint is not None else np.ones(n))
    lp.primal()
    x_perm, pi = lp.solution()
    x = np.empty(n)
    x[order] = x_perm
    return x, pi, lp.iterations


SCREEN_MIN = 256


def _solve_screened(r, a, b, hint, max_iter, feas_tol):
    """Solve over the customers nearest the hint's margin, fixing the rest.

    Customers far above (below) the margin are pinned to 1 (0). The restricted
    optimum is accepted only if its prices satisfy complementary slackness for
    every pinned customer; otherwise the working set grows and the solve repeats.
    The result is therefore an optimum of the full LP.
    """
    n, m = a.shape
    score = r - a @ hint
    rank = np.argsort(np.abs(score), kind="stable")
    size = min(n, 16 * m + n // 8)
    tol = 1e-9 * max(1.0, float(np.abs(r).max()))
    iterations = 0
    while True:
        work = np.zeros(n, dtype=bool)
        work[rank[:size]] = True
        pinned = ~work & (score > 0)
        rest = b - a[pinned].sum(axis=0)
        if size < n and np.any(rest <= 0):
            size = min(n, 2 * size)
            continue
        idx = np.flatnonzero(work)
        xw, pi, its = _solve_core(r[idx], a[idx], rest, hint, max_iter, feas_tol)
        iterations += its
        red = r - a @ pi
        wrong = (pinned & (red < -tol)) | (~work & ~pinned & (red > tol))
        if size >= n or not wrong.any():
            x = pinned.astype(float)
            x[idx] = xw
            return x, pi, iterations
        size = min(n, 2 * size)
        hint = pi


def solve_lp_bounded(samples, budget, price_hint=None, max_iter: Optional[int] = None,
                     feas_tol: float = 1e-9) -> LpSolution:
    """Optimal vertex of the packing LP and its resource multipliers.

    ``price_hint`` seeds a dual-simplex warm start and, for large instances,
    the working set; the same inputs always produce the same vertex.
    """
    if isinstance(samples, SampleSet):
        r, a = samples.rewards, samples.consumption
    else:
        r, a = samples
        r = np.asarray(r, dtype=float).reshape(-1)
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a.reshape(-1, 1)
    b = np.atleast_1d(np.asarray(budget, dtype=float))
    n, m = a.shape
    if b.shape != (m,) or r.shape[0] != n:
        raise InvalidInput(f"budget shape {b.shape} incompatible with consumption {a.shape}")
    if np.any(b <= 0):
        raise InvalidInput("budget must be positive componentwise")
    if n == 0:
        return LpSolution(np.zeros(0), np.zeros(m), 0.0, 0)

    hint = None
    if price_hint is not None:
        hint = np.maximum(np.atleast_1d(np.asarray(price_hint, dtype=float)), 0.0)
        if hint.shape != (m,):
            raise InvalidInput("price_hint has the wrong dimension")
    if hint is None and n > SCREEN_MIN:
        # prices of a proportional subsample make a close starting guess
        sub = slice(None, None, 8)
        frac_b = b * (r[sub].shape[0] / n)
        hint = solve_lp_bounded((r[sub], a[sub]), frac_b, None, max_iter, feas_tol).dual_prices
    if hint is not None and n > SCREEN_MIN:
        x, pi, its = _solve_screened(r, a, b, hint, max_iter, feas_tol)
    else:
        x, pi, its = _solve_core(r, a, b, hint, max_iter, feas_tol)
    frac = int(np.count_nonzero((x > 1e-9) & (x < 1.0 - 1e-9)))
    return LpSolution(x, pi, float(np.sum(r * x)), frac, its)
