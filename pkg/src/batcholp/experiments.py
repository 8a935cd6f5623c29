"""Monte-Carlo regret estimation, table presets, fits and batch-size selection.

Trial ``i`` of a configuration draws its stream from ``(seed, stream_id=i)``
only, so cells that differ only in K (or in the policy variant) see the same
customers and the same offline optimum. Estimates are assembled by trial
index, which makes them identical for any number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .dual import population_dual, solve_dual_single
from .errors import InvalidConfig, InvalidInput, NoRootError, UnsupportedSpec
from .market import (Exponential, Law, MarketSpec, attach_impatience, sample_history,
                     sample_stream_fixed, sample_stream_poisson, uniform_market)
from .offline import filtered_benchmark, offline_optimum
from .policies import (BatchSchedule, LAST_BATCH_MODES, run_ahdla_baseline, run_alg1, run_alg2,
                       run_alg3, run_alg3_known_rate, run_alg4)

COUNT_POLICIES = ("alg1", "alg2", "alg2-nohistory", "ahdla")
POISSON_POLICIES = ("alg3", "alg3-known-rate", "alg4")
POLICIES = COUNT_POLICIES + POISSON_POLICIES
SINGLE_RESOURCE = ("alg1", "ahdla", "alg3", "alg3-known-rate", "alg4")

# pathwise checks allow this much floating-point slack
DOMINANCE_SLACK = 1e-9


@dataclass(frozen=True)
class ExperimentConfig:
    """One grid cell. ``b0`` is ``budget_per_unit`` times n (or rate * horizon) per resource."""

    policy: str
    spec: MarketSpec
    K: int
    n: Optional[int] = None
    rate: Optional[float] = None
    horizon: Optional[float] = None
    trials: int = 1000
    seed: int = 0
    budget_per_unit: float = 5.0
    last_batch: str = "integral"
    benchmark: str = "offline"  # or "filtered"
    gamma: Optional[float] = None
    keep_pairs: bool = False

    def label(self) -> str:
        size = f"n={self.n}" if self.policy in COUNT_POLICIES else f"lambda={self.rate:g} T={self.horizon:g}"
        extra = "" if self.gamma is None else f" gamma={self.gamma:g}"
        return f"{self.policy} m={self.spec.m} {size} K={self.K}{extra}"

    def validate(self) -> None:
        cell = self.label() if self.policy in POLICIES else self.policy

        def bad(msg):
            raise InvalidConfig(f"cell [{cell}]: {msg}")

        if self.policy not in POLICIES:
            bad(f"unknown policy; choose from {', '.join(POLICIES)}")
        if self.trials < 1:
            bad("trials must be positive")
        if self.last_batch not in LAST_BATCH_MODES:
            bad(f"last_batch must be one of {LAST_BATCH_MODES}")
        if self.benchmark not in ("offline", "filtered"):
            bad("benchmark must be 'offline' or 'filtered'")
        if self.policy in SINGLE_RESOURCE and self.spec.m != 1:
            bad("policy needs a single resource")
        if not self.budget_per_unit > 0:
            bad("budget_per_unit must be positive")
        if self.policy != "ahdla" and self.K < 2:
            bad("K must be at least 2")
        if self.policy in COUNT_POLICIES:
            if self.n is None or self.n < 1:
                bad("n must be a positive integer")
            if self.policy != "ahdla" and self.n % self.K:
                bad(f"K = {self.K} does not divide n = {self.n}")
        else:
            if self.rate is None or not self.rate > 0 or self.horizon is None or not self.horizon > 0:
                bad("rate and horizon must be positive")
            if not self.horizon / self.K > 0:
                bad("batch length must be positive")
        if self.policy == "alg4" and self.spec.impatience_law is None:
            bad("alg4 needs an impatience law")
        if self.benchmark == "filtered" and self.policy not in POISSON_POLICIES:
            bad("the filtered benchmark needs a Poisson stream")

    @property
    def b0(self) -> np.ndarray:
        scale = self.n if self.policy in COUNT_POLICIES else self.rate * self.horizon
        return np.full(self.spec.m, self.budget_per_unit * scale)

    def stream_key(self) -> tuple:
        kind = "unit" if self.policy in COUNT_POLICIES else "poisson"
        return (kind, self.spec, self.n, self.rate, self.horizon, self.seed, self.trials,
                self.policy == "alg4")

    def fingerprint(self) -> str:
        payload = {k: (repr(v) if k == "spec" else v) for k, v in asdict(self).items()}
        payload["spec"] = repr(self.spec)
        blob = json.dumps(payload, sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RegretEstimate:
    mean: float
    stderr: float
    trials: int
    fingerprint: str
    clamp_events: int = 0
    dominance_violations: int = 0
    feasibility_violations: int = 0
    min_regret: float = 0.0
    pairs: Optional[np.ndarray] = None  # (trials, 2): offline value, online reward

    @property
    def pathwise_ok(self) -> bool:
        return self.dominance_violations == 0 and self.feasibility_violations == 0


def _stream_for(cfg: ExperimentConfig, i: int):
    if cfg.policy in COUNT_POLICIES:
        return sample_stream_fixed(cfg.spec, cfg.n, cfg.seed, stream_id=i)
    stream = sample_stream_poisson(cfg.spec, cfg.rate, cfg.horizon, cfg.seed, stream_id=i)
    if cfg.spec.impatience_law is not None:
        stream = attach_impatience(stream, cfg.spec, cfg.seed, stream_id=i)
    return stream


def _run_policy(cfg: ExperimentConfig, stream, i: int):
    b0 = cfg.b0
    p = cfg.policy
    if p == "alg1":
        return run_alg1(stream, b0, cfg.K, last_batch=cfg.last_batch)
    if p in ("alg2", "alg2-nohistory"):
        use = p == "alg2"
        hist = sample_history(cfg.spec, cfg.n // cfg.K, cfg.seed, stream_id=i) if use else None
        return run_alg2(stream, hist, b0, cfg.K, use_history=use, last_batch=cfg.last_batch)
    if p == "ahdla":
        return run_ahdla_baseline(stream, b0)
    bounds = cfg.spec.bounds
    if p == "alg3":
        return run_alg3(stream, b0, cfg.K, bounds, last_batch=cfg.last_batch)
    if p == "alg3-known-rate":
        return run_alg3_known_rate(stream, b0, cfg.K, cfg.rate, bounds, last_batch=cfg.last_batch)
    return run_alg4(stream, b0, cfg.K, bounds, last_batch=cfg.last_batch)


def _trial_block(cells: Sequence[ExperimentConfig], start: int, stop: int) -> np.ndarray:
    """Rows (trial, cell, [offline, online, clamps, feasible])."""
    out = np.zeros((stop - start, len(cells), 4))
    for t, i in enumerate(range(start, stop)):
        stream = _stream_for(cells[0], i)
        cache: Dict[tuple, float] = {}
        for c, cfg in enumerate(cells):
            b0 = cfg.b0
            if cfg.benchmark == "filtered":
                key = ("filtered", cfg.K, tuple(b0))
                if key not in cache:
                    cache[key] = filtered_benchmark(stream, b0, BatchSchedule(cfg.horizon, cfg.K)).value
            else:
                key = ("offline", tuple(b0))
                if key not in cache:
                    cache[key] = offline_optimum(stream, b0).value
            outcome = _run_policy(cfg, stream, i)
            feasible = bool(np.all(outcome.consumption_used <= b0 * (1.0 + 1e-12)))
            out[t, c] = (cache[key], outcome.online_reward, outcome.clamp_events, feasible)
    return out


def _summarise(cfg: ExperimentConfig, rows: np.ndarray) -> RegretEstimate:
    offline, online = rows[:, 0], rows[:, 1]
    regret = offline - online
    n = regret.shape[0]
    stderr = float(regret.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    dom = int(np.count_nonzero(online > offline + DOMINANCE_SLACK * np.abs(offline)))
    return RegretEstimate(
        mean=float(regret.mean()),
        stderr=stderr,
        trials=n,
        fingerprint=cfg.fingerprint(),
        clamp_events=int(rows[:, 2].sum()),
        dominance_violations=dom,
        feasibility_violations=int(np.count_nonzero(rows[:, 3] == 0)),
        min_regret=float(regret.min()),
        pairs=np.column_stack([offline, online]) if cfg.keep_pairs else None,
    )


def _chunks(trials: int, workers: int) -> List[Tuple[int, int]]:
    parts = max(1, min(trials, 4 * workers))
    edges = np.linspace(0, trials, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def evaluate_grid(cells: Sequence[ExperimentConfig], workers: int = 1) -> List[RegretEstimate]:
    """Estimate every cell; cells sharing a stream key share streams and benchmarks."""
    for cfg in cells:
        cfg.validate()
    groups: Dict[tuple, List[int]] = {}
    for k, cfg in enumerate(cells):
        groups.setdefault(cfg.stream_key(), []).append(k)
    results: List[Optional[RegretEstimate]] = [None] * len(cells)
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for members in groups.values():
            group = [cells[k] for k in members]
            trials = group[0].trials
            spans = _chunks(trials, workers)
            if pool is None:
                blocks = [_trial_block(group, a, b) for a, b in spans]
            else:
                futures = [pool.submit(_trial_block, group, a, b) for a, b in spans]
                blocks = [f.result() for f in futures]
            rows = np.concatenate(blocks, axis=0)
            for c, k in enumerate(members):
                results[k] = _summarise(cells[k], rows[:, c])
    finally:
        if pool is not None:
            pool.shutdown()
    return results


def estimate_regret(config: ExperimentConfig, workers: int = 1) -> RegretEstimate:
    return evaluate_grid([config], workers)[0]


def default_workers() -> int:
    raw = os.environ.get("OLP_BATCH_WORKERS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise InvalidConfig(f"OLP_BATCH_WORKERS must be an integer, got {raw!r}")
    if value < 1:
        raise InvalidConfig("OLP_BATCH_WORKERS must be positive")
    return value


# --------------------------------------------------------------------------
# table presets


@dataclass(frozen=True)
class TablePreset:
    name: str
    policy: str
    m: int
    rows: tuple  # n values, or (rate, horizon) pairs
    Ks: tuple
    last_batch: str

    def cells(self, scale: str, trials: int, seed: int) -> List[ExperimentConfig]:
        if scale not in ("desk", "full"):
            raise InvalidConfig(f"scale must be 'desk' or 'full', got {scale!r}")
        rows = self.rows[:1] if scale == "desk" else self.rows
        spec = uniform_market(self.m)
        out = []
        for row in rows:
            for K in self.Ks:
                if self.policy in COUNT_POLICIES:
                    out.append(ExperimentConfig(self.policy, spec, K, n=row, trials=trials, seed=seed,
                                                last_batch=self.last_batch))
                else:
                    rate, T = row
                    out.append(ExperimentConfig(self.policy, spec, K, rate=rate, horizon=T, trials=trials,
                                                seed=seed, last_batch=self.last_batch))
        return out


_N_ROWS = (1280, 6400, 32000, 64000, 128000)
_POISSON_ROWS = tuple((lam, T) for lam in (10.0, 50.0, 100.0, 500.0) for T in (128.0, 512.0, 1024.0))

# Single-resource presets credit the fractional last-batch customer; the
# four-resource preset settles the last batch by the strict price rule.
PRESETS = {
    "table1": TablePreset("table1", "alg1", 1, _N_ROWS, (2, 8, 32, 64, 128), "fractional"),
    "table2": TablePreset("table2", "alg2", 4, _N_ROWS, (2, 8, 32, 64, 128), "integral"),
    "table3": TablePreset("table3", "alg3", 1, _POISSON_ROWS, (2, 8, 32, 64, 128, 256), "fractional"),
    "table4": TablePreset("table4", "alg3-known-rate", 1, _POISSON_ROWS, (2, 8, 32, 64, 128, 256),
                          "fractional"),
}

CSV_COLUMNS = ["preset", "policy", "m", "n_or_lambda", "T", "K", "gamma", "trials", "regret_mean",
               "regret_stderr", "clamp_events_total", "seed"]


def _fmt(x) -> str:
    return f"{x:.6g}"


@dataclass
class GridResult:
    preset: str
    cells: List[ExperimentConfig]
    estimates: List[RegretEstimate]

    def rows(self) -> List[dict]:
        out = []
        for cfg, est in zip(self.cells, self.estimates):
            count = cfg.policy in COUNT_POLICIES
            out.append({
                "preset": self.preset,
                "policy": cfg.policy,
                "m": str(cfg.spec.m),
                "n_or_lambda": str(cfg.n) if count else _fmt(cfg.rate),
                "T": str(cfg.n) if count else _fmt(cfg.horizon),
                "K": str(cfg.K),
                "gamma": "" if cfg.gamma is None else _fmt(cfg.gamma),
                "trials": str(est.trials),
                "regret_mean": _fmt(est.mean),
                "regret_stderr": _fmt(est.stderr),
                "clamp_events_total": str(est.clamp_events),
                "seed": str(cfg.seed),
            })
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows())

    def lookup(self, **match) -> RegretEstimate:
        for cfg, est in zip(self.cells, self.estimates):
            if all(getattr(cfg, k) == v for k, v in match.items()):
                return est
        raise KeyError(match)


def run_table(preset: str, scale: str = "desk", trials: int = 1000, seed: int = 0,
              workers: int = 1, last_batch: Optional[str] = None) -> GridResult:
    """Run a preset grid; ``last_batch`` overrides the preset's settlement mode."""
    if preset not in PRESETS:
        raise InvalidConfig(f"unknown preset {preset!r}; valid presets: {', '.join(sorted(PRESETS))}")
    chosen = PRESETS[preset]
    if last_batch is not None:
        chosen = replace(chosen, last_batch=last_batch)
    cells = chosen.cells(scale, trials, seed)
    return GridResult(preset, cells, evaluate_grid(cells, workers))


# --------------------------------------------------------------------------
# fits


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float


def fit_log_k(points: Sequence[Tuple[float, float]]) -> LinearFit:
    """Least squares of regret against ln K."""
    pts = [(float(k), float(v)) for k, v in points]
    if len({k for k, _ in pts}) < 3:
        raise InvalidInput("need at least 3 distinct K values")
    x = np.log([k for k, _ in pts])
    y = np.array([v for _, v in pts])
    if np.ptp(y) == 0:
        return LinearFit(0.0, float(y[0]), 1.0)
    res = stats.linregress(x, y)
    return LinearFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2))


@dataclass
class ConvergenceStudy:
    population_price: float
    sizes: List[int]
    mean_squared_error: List[float]
    slope: Optional[float]  # None with fewer than two sizes


def dual_convergence_study(spec: MarketSpec, d: float, sizes: Sequence[int], replications: int,
                           seed: int = 0) -> ConvergenceStudy:
    """Mean squared gap between sample and population dual prices for each sample size."""
    if spec.m != 1:
        raise UnsupportedSpec("the convergence study is for a single resource")
    p_star = population_dual(spec, d).scalar
    mses = []
    for s_idx, N in enumerate(sizes):
        err = np.empty(replications)
        for rep in range(replications):
            samples = sample_history(spec, int(N), seed, stream_id=s_idx * (1 << 32) + rep)
            err[rep] = solve_dual_single(samples, d).scalar - p_star
        mses.append(float(np.mean(err ** 2)))
    slope = None
    if len(sizes) >= 2:
        with np.errstate(divide="ignore"):
            ly = np.log(mses)
        if np.all(np.isfinite(ly)):
            slope = float(stats.linregress(np.log(np.asarray(sizes, dtype=float)), ly).slope)
    return ConvergenceStudy(p_star, [int(n) for n in sizes], mses, slope)


# --------------------------------------------------------------------------
# batch size under impatience


@dataclass(frozen=True)
class BatchSizeQuery:
    law: Law  # impatience law, supplies F through .cdf
    rate: float
    C: float = 1.0


def solve_batch_size(query: BatchSizeQuery, xtol: float = 1e-9, b_hi: float = 1e12) -> float:
    """Root of B F(B) = C / rate: bracket by doubling, then bisect."""
    if not query.rate > 0:
        raise InvalidInput("rate must be positive")
    if query.C < 0:
        raise InvalidInput("C must be nonnegative")
    goal = query.C / query.rate
    if goal == 0:
        return 0.0

    def f(B):
        return B * float(query.law.cdf(B)) - goal

    lo, hi = 0.0, 1.0
    while f(hi) < 0:
        lo, hi = hi, 2.0 * hi
        if hi > b_hi:
            raise NoRootError(f"B F(B) stays below {goal:g} up to B = {b_hi:g}")
    while hi - lo > xtol * min(1.0, hi):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return hi


def batches_for_gamma(T: float, rate: float, gamma: float) -> int:
    """K = round(T rate^gamma), at least 2, so that B = T / K approximates rate^-gamma."""
    K = int(round(T * rate ** gamma))
    if K < 2:
        warnings.warn(f"gamma = {gamma:g} gives K = {K}; using the minimum K = 2")
        K = 2
    return K


def gamma_sweep(gammas: Sequence[float], rates: Sequence[float], T: float = 10.0,
                spec: Optional[MarketSpec] = None, trials: int = 500, seed: int = 0,
                workers: int = 1, last_batch: str = "fractional",
                benchmark: str = "offline") -> GridResult:
    """Algorithm with impatience over batch sizes B = rate^-gamma."""
    if spec is None:
        spec = uniform_market(1, impatience=Exponential(1.0))
    cells = []
    for rate in rates:
        for g in gammas:
            cells.append(ExperimentConfig("alg4", spec, batches_for_gamma(T, rate, g), rate=float(rate),
                                          horizon=float(T), trials=trials, seed=seed, last_batch=last_batch,
                                          benchmark=benchmark, gamma=float(g)))
    return GridResult("gamma", cells, evaluate_grid(cells, workers))


__all__ = [
    "BatchSizeQuery", "ConvergenceStudy", "ExperimentConfig", "GridResult", "LinearFit", "PRESETS",
    "RegretEstimate", "TablePreset", "batches_for_gamma", "default_workers", "dual_convergence_study",
    "estimate_regret", "evaluate_grid", "fit_log_k", "gamma_sweep", "run_table", "solve_batch_size",
]
