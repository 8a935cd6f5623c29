"""Batched online linear programming: dual-price policies and their regret."""

from .dual import DualPrice, PrefixDualSolver, population_dual, solve_dual_single
from .errors import InvalidConfig, InvalidInput, NoRootError, SolverFailure, UnsupportedSpec
from .market import (Bounds, Deterministic, Exponential, MarketSpec, SampleSet, Stream, Uniform,
                     parse_law, sample_history, sample_stream_fixed, sample_stream_poisson,
                     uniform_market)
from .offline import filtered_benchmark, offline_optimum
from .policies import (BatchSchedule, TrialOutcome, run_ahdla_baseline, run_alg1, run_alg2, run_alg3,
                       run_alg3_known_rate, run_alg4)
from .simplex import LpSolution, solve_lp_bounded

__version__ = "0.1.0"
