"""Seeded generation of customer streams.

Randomness comes from numpy's Philox counter-based generator. Every draw is
keyed by ``(seed, stream_id, substream)`` where the substream is one of
``arrivals``, ``marks``, ``patience`` or ``history``; the key is
``[seed, stream_id * 16 + code]`` with the counter starting at zero. Trials are
therefore reproducible individually and in any order, on any number of
workers.

Marks are drawn row by row (one row of ``1 + m`` uniforms per customer) and
pushed through each law's inverse c.d.f., so customer ``j`` gets the same
``(r_j, a_j)`` regardless of how many customers the stream ends up holding.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import InvalidConfig

SUBSTREAMS = {"arrivals": 1, "marks": 2, "patience": 3, "history": 4}
HISTORY_STREAM_OFFSET = 1 << 40


def make_rng(seed: int, stream_id: int, substream: str) -> np.random.Generator:
    """Philox generator for one named substream of one stream."""
    if substream not in SUBSTREAMS:
        raise ValueError(f"unknown substream {substream!r}")
    if not 0 <= stream_id < (1 << 59):
        raise ValueError("stream_id must lie in [0, 2**59)")
    key = np.array([seed % (1 << 64), stream_id * 16 + SUBSTREAMS[substream]], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# --------------------------------------------------------------------------
# distribution laws


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi >= self.lo:
            raise InvalidConfig(f"Uniform needs hi >= lo, got ({self.lo}, {self.hi})")

    def from_uniform(self, u):
        # lo + (hi - lo) u with u in [0, 1)
        return self.lo + (self.hi - self.lo) * u

    @property
    def support(self):
        return (self.lo, self.hi)

    @property
    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def cdf(self, x):
        if self.hi == self.lo:
            return np.where(np.asarray(x) >= self.lo, 1.0, 0.0)
        return np.clip((np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def survival(self, x):
        """P{X > x}."""
        return 1.0 - self.cdf(x)


@dataclass(frozen=True)
class Deterministic:
    value: float

    def from_uniform(self, u):
        return np.full(np.shape(u), float(self.value))

    @property
    def support(self):
        return (self.value, self.value)

    @property
    def mean(self):
        return float(self.value)

    def cdf(self, x):
        return np.where(np.asarray(x) >= self.value, 1.0, 0.0)

    def survival(self, x):
        return 1.0 - self.cdf(x)


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise InvalidConfig("Exponential rate must be positive")

    def from_uniform(self, u):
        return -np.log1p(-np.asarray(u)) / self.rate

    @property
    def support(self):
        return (0.0, math.inf)

    @property
    def mean(self):
        return 1.0 / self.rate

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, -np.expm1(-self.rate * np.maximum(x, 0.0)), 0.0)

    def survival(self, x):
        return 1.0 - self.cdf(x)


Law = Union[Uniform, Deterministic, Exponential]


def parse_law(text: str) -> Law:
    """Parse ``uniform(1, 19)``, ``exp(1)``, ``det(inf)`` and friends."""
    s = text.strip().lower().replace(" ", "")
    if "(" not in s or not s.endswith(")"):
        raise InvalidConfig(f"cannot parse distribution {text!r}")
    name, args = s[:-1].split("(", 1)
    try:
        vals = [float(v) for v in args.split(",") if v]
    except ValueError:
        raise InvalidConfig(f"non-numeric parameter in {text!r}") from None
    if name in ("uniform", "unif", "u") and len(vals) == 2:
        return Uniform(*vals)
    if name in ("exp", "exponential") and len(vals) == 1:
        return Exponential(vals[0])
    if name in ("det", "deterministic", "const") and len(vals) == 1:
        return Deterministic(vals[0])
    raise InvalidConfig(f"unknown distribution {text!r}")


# --------------------------------------------------------------------------
# market description


@dataclass(frozen=True)
class Bounds:
    """Known support constants: r_bar, a_bar, a_lower and the (d_lower, d_upper) box."""

    r_bar: float
    a_bar: float
    a_lower: float
    d_lower: float
    d_upper: float

    def __post_init__(self):
        if min(self.r_bar, self.a_bar, self.a_lower, self.d_lower) <= 0:
            raise InvalidConfig("bounds must be positive")
        if not self.d_upper > self.d_lower:
            raise InvalidConfig("d_upper must exceed d_lower")
        if self.a_lower > self.a_bar:
            raise InvalidConfig("a_lower must not exceed a_bar")

    @property
    def price_cap(self) -> float:
        """Box bound r_bar / d_lower on the dual price."""
        return self.r_bar / self.d_lower


@dataclass(frozen=True)
class MarketSpec:
    """Generative model of one customer: independent reward and consumption laws.

    ``consumption_law`` is either one law shared by all ``m`` coordinates or a
    tuple of ``m`` laws. Laws outside the uniform family are accepted, but the
    population dual and the regret guarantees are only meaningful for laws
    with a continuous reward given consumption.
    """

    m: int
    reward_law: Law
    consumption_law: Union[Law, tuple]
    bounds: Bounds
    impatience_law: Optional[Law] = None

    def __post_init__(self):
        if self.m < 1:
            raise InvalidConfig("m must be a positive integer")
        if isinstance(self.consumption_law, tuple) and len(self.consumption_law) != self.m:
            raise InvalidConfig("need one consumption law per resource")
        lo, hi = self.reward_law.support
        if lo < 0 or hi > self.bounds.r_bar:
            raise InvalidConfig(f"reward support [{lo}, {hi}] not inside [0, {self.bounds.r_bar}]")
        for law in self.consumption_laws:
            lo, hi = law.support
            if lo < self.bounds.a_lower or hi > self.bounds.a_bar:
                raise InvalidConfig(
                    f"consumption support [{lo}, {hi}] not inside "
                    f"[{self.bounds.a_lower}, {self.bounds.a_bar}]"
                )
        if self.impatience_law is not None and self.impatience_law.support[0] < 0:
            raise InvalidConfig("patience must be nonnegative")

    @property
    def consumption_laws(self) -> tuple:
        if isinstance(self.consumption_law, tuple):
            return self.consumption_law
        return (self.consumption_law,) * self.m

    def check_initial_average(self, d0) -> None:
        """Enforce d_lower < d0 < d_upper componentwise."""
        d0 = np.broadcast_to(np.asarray(d0, dtype=float), (self.m,))
        if np.any(d0 <= self.bounds.d_lower) or np.any(d0 >= self.bounds.d_upper):
            raise InvalidConfig(
                f"initial average resource {d0.tolist()} must lie strictly inside "
                f"({self.bounds.d_lower}, {self.bounds.d_upper})"
            )

    def with_impatience(self, law: Optional[Law]) -> "MarketSpec":
        return MarketSpec(self.m, self.reward_law, self.consumption_law, self.bounds, law)


def uniform_market(m: int = 1, lo: float = 1.0, hi: float = 19.0, impatience: Optional[Law] = None,
                   d_lower: float = 1.0, d_upper: float = 9.0) -> MarketSpec:
    """The experiment law: r and every a_i i.i.d. Uniform(lo, hi), all independent."""
    return MarketSpec(
        m=m,
        reward_law=Uniform(lo, hi),
        consumption_law=Uniform(lo, hi),
        bounds=Bounds(r_bar=hi, a_bar=hi, a_lower=lo, d_lower=d_lower, d_upper=d_upper),
        impatience_law=impatience,
    )


# --------------------------------------------------------------------------
# samples and streams


def _frozen(x, dtype=float):
    arr = np.array(x, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SampleSet:
    """Ordered (reward, consumption) pairs; ``consumption`` has shape (N, m)."""

    rewards: np.ndarray
    consumption: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rewards, dtype=float).reshape(-1)
        a = np.asarray(self.consumption, dtype=float)
        if a.ndim == 1:
            a = a.reshape(-1, 1)
        if a.ndim != 2 or a.shape[0] != r.shape[0]:
            raise InvalidConfig(f"consumption shape {a.shape} does not match {r.shape[0]} rewards")
        object.__setattr__(self, "rewards", _frozen(r))
        object.__setattr__(self, "consumption", _frozen(a))

    @property
    def m(self) -> int:
        return self.consumption.shape[1]

    def __len__(self) -> int:
        return self.rewards.shape[0]

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.rewards[idx], self.consumption[idx])

    def validate(self, spec: MarketSpec, tol: float = 0.0) -> None:
        b = spec.bounds
        if self.m != spec.m:
            raise InvalidConfig(f"sample dimension {self.m} != market dimension {spec.m}")
        if len(self) == 0:
            return
        if self.rewards.min() < -tol or self.rewards.max() > b.r_bar + tol:
            raise InvalidConfig("reward outside [0, r_bar]")
        if self.consumption.min() < b.a_lower - tol or self.consumption.max() > b.a_bar + tol:
            raise InvalidConfig("consumption outside [a_lower, a_bar]")


@dataclass(frozen=True)
class Customer:
    reward: float
    consumption: np.ndarray
    arrival_time: float
    patience: float = math.inf


@dataclass(frozen=True)
class Stream:
    """Immutable arrival-ordered customer stream.

    ``kind`` is ``"unit"`` (customer j arrives at time j, horizon = count) or
    ``"poisson"`` (homogeneous rate ``rate`` on (0, horizon]).
    """

    rewards: np.ndarray
    consumption: np.ndarray
    arrival_times: np.ndarray
    patience: np.ndarray
    horizon: float
    kind: str = "unit"
    rate: Optional[float] = None

    def __post_init__(self):
        samples = SampleSet(self.rewards, self.consumption)
        object.__setattr__(self, "rewards", samples.rewards)
        object.__setattr__(self, "consumption", samples.consumption)
        object.__setattr__(self, "arrival_times", _frozen(np.asarray(self.arrival_times).reshape(-1)))
        object.__setattr__(self, "patience", _frozen(np.asarray(self.patience).reshape(-1)))
        n = len(samples)
        if self.arrival_times.shape[0] != n or self.patience.shape[0] != n:
            raise InvalidConfig("arrival_times / patience length mismatch")
        if n > 1 and np.any(np.diff(self.arrival_times) <= 0):
            raise InvalidConfig("arrival times must be strictly increasing")
        if n and (self.arrival_times[0] <= 0 or self.arrival_times[-1] > self.horizon):
            raise InvalidConfig("arrival times must lie in (0, horizon]")
        if self.kind not in ("unit", "poisson"):
            raise InvalidConfig(f"unknown arrival kind {self.kind!r}")

    def __len__(self) -> int:
        return self.rewards.shape[0]

    @property
    def m(self) -> int:
        return self.consumption.shape[1]

    @property
    def samples(self) -> SampleSet:
        return SampleSet(self.rewards, self.consumption)

    @property
    def customers(self) -> list:
        return [
            Customer(float(self.rewards[j]), self.consumption[j], float(self.arrival_times[j]),
                     float(self.patience[j]))
            for j in range(len(self))
        ]

    def count_until(self, t) -> int:
        """N(t): arrivals in [0, t]."""
        return int(np.searchsorted(self.arrival_times, t, side="right"))

    def with_patience(self, patience) -> "Stream":
        return Stream(self.rewards, self.consumption, self.arrival_times, patience,
                      self.horizon, self.kind, self.rate)

    def prefix(self, n: int) -> "Stream":
        return Stream(self.rewards[:n], self.consumption[:n], self.arrival_times[:n],
                      self.patience[:n], self.horizon, self.kind, self.rate)

    def replace_marks(self, rewards, consumption) -> "Stream":
        return Stream(rewards, consumption, self.arrival_times, self.patience,
                      self.horizon, self.kind, self.rate)


def _draw_marks(spec: MarketSpec, n: int, rng: np.random.Generator):
    u = rng.random((n, 1 + spec.m))
    r = np.asarray(spec.reward_law.from_uniform(u[:, 0]), dtype=float)
    a = np.empty((n, spec.m))
    for i, law in enumerate(spec.consumption_laws):
        a[:, i] = law.from_uniform(u[:, 1 + i])
    return r, a


def sample_stream_fixed(spec: MarketSpec, n: int, seed: int, stream_id: int = 0) -> Stream:
    """n customers arriving at times 1..n, infinite patience."""
    if n < 1:
        raise InvalidConfig("n must be at least 1")
    r, a = _draw_marks(spec, n, make_rng(seed, stream_id, "marks"))
    times = np.arange(1, n + 1, dtype=float)
    return Stream(r, a, times, np.full(n, math.inf), horizon=float(n), kind="unit")


def poisson_arrival_times(rate: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Cumulative sums of Exp(rate) gaps, truncated to (0, horizon]."""
    mean = rate * horizon
    chunk = int(mean + 6.0 * math.sqrt(mean) + 16)
    times = np.cumsum(rng.standard_exponential(chunk) / rate)
    while times[-1] <= horizon:
        more = times[-1] + np.cumsum(rng.standard_exponential(chunk) / rate)
        times = np.concatenate([times, more])
    return times[: np.searchsorted(times, horizon, side="right")]


def sample_stream_poisson(spec: MarketSpec, rate: float, horizon: float, seed: int,
                          stream_id: int = 0) -> Stream:
    """Homogeneous Poisson(rate) arrivals on (0, horizon] with i.i.d. marks."""
    if not rate > 0 or not horizon > 0:
        raise InvalidConfig("rate and horizon must be positive")
    times = poisson_arrival_times(rate, horizon, make_rng(seed, stream_id, "arrivals"))
    n = times.shape[0]
    r, a = _draw_marks(spec, n, make_rng(seed, stream_id, "marks"))
    return Stream(r, a, times, np.full(n, math.inf), horizon=float(horizon), kind="poisson", rate=rate)


def attach_impatience(stream: Stream, spec: MarketSpec, seed: int, stream_id: int = 0) -> Stream:
    """Draw i.i.d. patience clocks W_j from the market's impatience law."""
    if spec.impatience_law is None:
        raise InvalidConfig("market has no impatience_law")
    u = make_rng(seed, stream_id, "patience").random(len(stream))
    return stream.with_patience(np.asarray(spec.impatience_law.from_uniform(u), dtype=float))


def sample_history(spec: MarketSpec, count: int, seed: int, stream_id: int = 0) -> SampleSet:
    """``count`` pre-horizon samples from a dedicated substream (disjoint from any stream's marks)."""
    if count < 1:
        raise InvalidConfig("history count must be at least 1")
    r, a = _draw_marks(spec, count, make_rng(seed, stream_id, "history"))
    return SampleSet(r, a)


# --------------------------------------------------------------------------
# CSV layout: index, arrival_time, patience, reward, a_1..a_m


def stream_to_csv(stream: Stream, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "arrival_time", "patience", "reward"] + [f"a_{i + 1}" for i in range(stream.m)])
        for j in range(len(stream)):
            w.writerow([j + 1, repr(float(stream.arrival_times[j])), repr(float(stream.patience[j])),
                        repr(float(stream.rewards[j]))] + [repr(float(v)) for v in stream.consumption[j]])


def stream_from_csv(path, horizon: Optional[float] = None, kind: str = "unit",
                    rate: Optional[float] = None) -> Stream:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidConfig(f"{path}: empty file")
    header = rows[0]
    acols = [i for i, h in enumerate(header) if h.startswith("a_")]
    try:
        col = {h: header.index(h) for h in ("arrival_time", "patience", "reward")}
    except ValueError:
        raise InvalidConfig(f"{path}: missing stream columns") from None
    body = [row for row in rows[1:] if row]
    times = np.array([float(row[col["arrival_time"]]) for row in body])
    pat = np.array([float(row[col["patience"]]) for row in body])
    r = np.array([float(row[col["reward"]]) for row in body])
    a = np.array([[float(row[i]) for i in acols] for row in body]).reshape(len(body), len(acols))
    if horizon is None:
        horizon = float(times[-1]) if len(times) else 1.0
    return Stream(r, a, times, pat, horizon=horizon, kind=kind, rate=rate)


def samples_from_csv(path) -> SampleSet:
    """Read ``reward, a_1..a_m`` columns (extra columns ignored)."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if len(rows) < 1:
        raise InvalidConfig(f"{path}: empty file")
    header = rows[0]
    if "reward" not in header:
        raise InvalidConfig(f"{path}: no 'reward' column")
    ri = header.index("reward")
    acols = [i for i, h in enumerate(header) if h.startswith("a_")]
    if not acols:
        raise InvalidConfig(f"{path}: no a_i columns")
    r = np.array([float(row[ri]) for row in rows[1:]])
    a = np.array([[float(row[i]) for i in acols] for row in rows[1:]]).reshape(len(rows) - 1, len(acols))
    return SampleSet(r, a)
