"""Command-line front end.

Commands: table, simulate, batch-size, plot, dual-solve. Exit codes are 0 on
success, 2 for usage or configuration errors, 3 for I/O failures and 4 when a
solver fails internally. Every file written is accompanied by a
``<name>.manifest.json`` holding the command line and resolved settings.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import re
import sys
import time
from pathlib import Path
from typing import List, Optional
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .dual import solve_dual_single
from .errors import InvalidConfig, InvalidInput, NoRootError, SolverFailure, UnsupportedSpec
from .experiments import (BatchSizeQuery, ExperimentConfig, GridResult, PRESETS, batches_for_gamma,
                          default_workers, evaluate_grid, run_table, solve_batch_size)
from .market import Bounds, Deterministic, Exponential, MarketSpec, parse_law, samples_from_csv
from .simplex import solve_lp_bounded

log = logging.getLogger("batcholp")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SOLVER = 0, 2, 3, 4


class ConfigError(InvalidConfig):
    def __init__(self, path, line, col, msg):
        super().__init__(f"{path}:{line}:{col}: {msg}")


# --------------------------------------------------------------------------
# manifests


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(artifact: Path, command: str, argv: List[str], resolved: dict, seed, started: float,
                   extra_artifacts=()) -> Path:
    paths = [artifact, *extra_artifacts]
    manifest = {
        "command": command,
        "argv": list(argv),
        "resolved_config": resolved,
        "seed": seed,
        "artifacts": {str(p): _sha256(p) for p in paths},
        "wall_clock_seconds": round(time.time() - started, 3),
        "library_version": __version__,
    }
    out = artifact.with_name(artifact.name + ".manifest.json")
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _log_cells(result: GridResult):
    for row in result.rows():
        log.info("%s K=%s n_or_lambda=%s T=%s gamma=%s regret=%s (se %s)", row["policy"], row["K"],
                 row["n_or_lambda"], row["T"], row["gamma"] or "-", row["regret_mean"], row["regret_stderr"])


def _workers(args) -> int:
    return args.workers if args.workers is not None else default_workers()


# --------------------------------------------------------------------------
# table


def cmd_table(args, argv) -> int:
    started = time.time()
    if args.preset not in PRESETS:
        raise InvalidConfig(f"unknown preset {args.preset!r}; valid presets: {', '.join(sorted(PRESETS))}")
    workers = _workers(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_table(args.preset, args.scale, trials=args.trials, seed=args.seed, workers=workers)
    path = out_dir / f"{args.preset}_{args.scale}.csv"
    result.to_csv(path)
    _log_cells(result)
    resolved = {"preset": args.preset, "scale": args.scale, "trials": args.trials, "seed": args.seed,
                "last_batch": PRESETS[args.preset].last_batch}
    write_manifest(path, "table", argv, resolved, args.seed, started)
    print(path)
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate: INI config with [market] [policy] [grid] [run]

CONFIG_KEYS = {
    "market": {"m", "reward", "consumption", "impatience", "r_bar", "a_bar", "a_lower", "d_lower", "d_upper"},
    "policy": {"name", "last_batch", "benchmark", "budget_per_unit"},
    "grid": {"n", "k", "rate", "horizon", "gamma"},
    "run": {"trials", "seed", "workers"},
}


def _locate(text: str, section: str, key: str):
    """(line, column) of ``key`` inside ``[section]``; column points at the value."""
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip().lower()
            continue
        if current == section:
            m = re.match(r"\s*([^=:\s]+)\s*[=:]\s*", line)
            if m and m.group(1).lower() == key:
                return lineno, m.end() + 1
    return 1, 1


class _Config:
    def __init__(self, path):
        self.path = str(path)
        self.text = Path(path).read_text()
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(self.text, source=self.path)
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError(self.path, exc.lineno, 1, "expected a [section] header before any key") from None
        except configparser.DuplicateOptionError as exc:
            raise ConfigError(self.path, exc.lineno, 1, f"duplicate key {exc.option!r}") from None
        except configparser.DuplicateSectionError as exc:
            raise ConfigError(self.path, exc.lineno, 1, f"duplicate section [{exc.section}]") from None
        except configparser.ParsingError as exc:
            lineno, line = exc.errors[0]
            raise ConfigError(self.path, lineno, 1, f"cannot parse {line.strip()!r}; expected 'key = value'") from None
        self.parser = parser
        for section in parser.sections():
            if section not in CONFIG_KEYS:
                line = next((i for i, l in enumerate(self.text.splitlines(), 1)
                             if l.strip().lower() == f"[{section}]"), 1)
                raise ConfigError(self.path, line, 1, f"unknown section [{section}]")
            for key in parser[section]:
                if key not in CONFIG_KEYS[section]:
                    raise self.error(section, key, f"unknown key {key!r} in [{section}]")

    def error(self, section, key, msg):
        line, col = _locate(self.text, section, key)
        return ConfigError(self.path, line, col, msg)

    def raw(self, section, key):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key)
        return None

    def get(self, section, key, cast, default=None):
        raw = self.raw(section, key)
        if raw is None:
            return default
        try:
            return cast(raw.strip())
        except (ValueError, InvalidConfig) as exc:
            raise self.error(section, key, f"bad value {raw!r} for {key}: {exc}") from None

    def get_list(self, section, key, cast):
        raw = self.raw(section, key)
        if raw is None:
            return None
        try:
            vals = [cast(v.strip()) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise self.error(section, key, f"bad list {raw!r} for {key}") from None
        if not vals:
            raise self.error(section, key, f"empty list for {key}")
        return vals


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError("not an integer")
    return int(v)


def _market(cfg: _Config) -> MarketSpec:
    m = cfg.get("market", "m", _int, 1)
    reward = cfg.get("market", "reward", parse_law, parse_law("uniform(1,19)"))
    cons = cfg.get("market", "consumption", parse_law, reward)
    imp = cfg.get("market", "impatience", parse_law, None)
    r_hi, a_lo, a_hi = reward.support[1], cons.support[0], cons.support[1]
    bounds = dict(
        r_bar=cfg.get("market", "r_bar", float, r_hi),
        a_bar=cfg.get("market", "a_bar", float, a_hi),
        a_lower=cfg.get("market", "a_lower", float, a_lo),
        d_lower=cfg.get("market", "d_lower", float, 1.0),
        d_upper=cfg.get("market", "d_upper", float, 9.0),
    )
    try:
        return MarketSpec(m, reward, cons, Bounds(**bounds), imp)
    except InvalidConfig as exc:
        raise cfg.error("market", "reward", str(exc)) from None


def cells_from_config(path) -> tuple:
    cfg = _Config(path)
    spec = _market(cfg)
    policy = cfg.get("policy", "name", str, None)
    if policy is None:
        raise ConfigError(cfg.path, 1, 1, "[policy] name is required")
    common = dict(
        trials=cfg.get("run", "trials", _int, 1000),
        seed=cfg.get("run", "seed", _int, 0),
        budget_per_unit=cfg.get("policy", "budget_per_unit", float, 5.0),
        last_batch=cfg.get("policy", "last_batch", str, "integral"),
        benchmark=cfg.get("policy", "benchmark", str, "offline"),
    )
    ns = cfg.get_list("grid", "n", _int)
    Ks = cfg.get_list("grid", "k", _int)
    rates = cfg.get_list("grid", "rate", float)
    horizons = cfg.get_list("grid", "horizon", float)
    gammas = cfg.get_list("grid", "gamma", float)
    cells = []
    if gammas is not None:
        if rates is None or horizons is None:
            raise cfg.error("grid", "gamma", "a gamma grid needs rate and horizon")
        for rate in rates:
            for T in horizons:
                for g in gammas:
                    cells.append(ExperimentConfig(policy, spec, batches_for_gamma(T, rate, g), rate=rate,
                                                  horizon=T, gamma=g, **common))
    elif ns is not None:
        for n in ns:
            for K in Ks or [1]:
                cells.append(ExperimentConfig(policy, spec, K, n=n, **common))
    elif rates is not None:
        if horizons is None:
            raise cfg.error("grid", "rate", "a rate grid needs horizon")
        for rate in rates:
            for T in horizons:
                for K in Ks or [1]:
                    cells.append(ExperimentConfig(policy, spec, K, rate=rate, horizon=T, **common))
    else:
        raise ConfigError(cfg.path, 1, 1, "[grid] needs n, or rate and horizon")
    workers = cfg.get("run", "workers", _int, None)
    resolved = {s: dict(cfg.parser[s]) for s in cfg.parser.sections()}
    return cells, workers, resolved


def cmd_simulate(args, argv) -> int:
    started = time.time()
    try:
        cells, workers, resolved = cells_from_config(args.config)
    except FileNotFoundError as exc:
        raise InvalidConfig(f"config file not found: {exc.filename}") from None
    if args.workers is not None:
        workers = args.workers
    if workers is None:
        workers = default_workers()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    estimates = evaluate_grid(cells, workers)
    result = GridResult("simulate", cells, estimates)
    path = out_dir / f"{Path(args.config).stem}.csv"
    result.to_csv(path)
    _log_cells(result)
    write_manifest(path, "simulate", argv, resolved, cells[0].seed if cells else None, started)
    print(path)
    return EXIT_OK


# --------------------------------------------------------------------------
# batch-size


def _impatience_law(dist: str, param: Optional[float]):
    s = dist.strip().lower()
    if "(" in s:
        return parse_law(s)
    if s in ("exp", "exponential"):
        return Exponential(1.0 if param is None else param)
    if s in ("det", "deterministic"):
        return Deterministic(0.0 if param is None else param)
    raise InvalidConfig(f"unknown distribution {dist!r}; use exp, det or a law like uniform(0,2)")


def cmd_batch_size(args, argv) -> int:
    law = _impatience_law(args.dist, args.param)
    B = solve_batch_size(BatchSizeQuery(law, args.rate, args.C))
    print(f"{B:.12g}")
    return EXIT_OK


# --------------------------------------------------------------------------
# plot: hand-written SVG line plots

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
RESULT_COLUMNS = {"regret_mean", "regret_stderr", "clamp_events_total", "trials", "seed"}


def _ticks(lo, hi, count=5):
    if hi == lo:
        return [lo]
    return list(np.linspace(lo, hi, count))


def render_svg(series: dict, x_label: str, y_label: str, logx: bool = False, width=640, height=420) -> str:
    left, right, top, bottom = 70, 150, 30, 55
    pw, ph = width - left - right, height - top - bottom
    xs = np.concatenate([np.asarray(v[0], dtype=float) for v in series.values()])
    ys = np.concatenate([np.asarray(v[1], dtype=float) for v in series.values()])
    tx = np.log(xs) if logx else xs
    x0, x1 = float(tx.min()), float(tx.max())
    y0, y1 = float(min(ys.min(), 0.0)), float(ys.max())
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y1 = y0 + 1

    def sx(v):
        v = math.log(v) if logx else v
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    xticks = sorted(set(xs.tolist())) if len(set(xs.tolist())) <= 10 else [
        (math.exp(t) if logx else t) for t in _ticks(x0, x1)]
    for t in xticks:
        px = sx(t)
        out.append(f'<line x1="{px:.2f}" y1="{top + ph}" x2="{px:.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px:.2f}" y="{top + ph + 18}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        py = sy(t)
        out.append(f'<line x1="{left - 5}" y1="{py:.2f}" x2="{left}" y2="{py:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{py + 4:.2f}" text-anchor="end">{t:.4g}</text>')
    xl = escape(x_label + (" (log scale)" if logx else ""))
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{xl}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(y_label)}</text>')
    for i, (name, (sxv, syv)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        order = np.argsort(np.asarray(sxv, dtype=float), kind="stable")
        pts = " ".join(f"{sx(float(sxv[j])):.2f},{sy(float(syv[j])):.2f}" for j in order)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        for j in order:
            out.append(f'<circle cx="{sx(float(sxv[j])):.2f}" cy="{sy(float(syv[j])):.2f}" r="3" fill="{color}"/>')
        ly = top + 10 + 18 * i
        out.append(f'<g class="legend-entry"><line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" '
                   f'y2="{ly}" stroke="{color}" stroke-width="2"/>'
                   f'<text x="{left + pw + 38}" y="{ly + 4}">{escape(name)}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        fields = reader.fieldnames or []
    return fields, rows


def cmd_plot(args, argv) -> int:
    started = time.time()
    fields, rows = _read_rows(args.csv)
    if not rows:
        raise InvalidConfig(f"{args.csv}: no data rows")
    for col in (args.x, args.y):
        if col not in fields:
            raise InvalidConfig(f"column {col!r} not in {args.csv}; columns: {', '.join(fields)}")
    if args.group:
        group_cols = [c.strip() for c in args.group.split(",")]
        missing = [c for c in group_cols if c not in fields]
        if missing:
            raise InvalidConfig(f"group column(s) {missing} not in {args.csv}")
    else:
        group_cols = [c for c in fields if c not in RESULT_COLUMNS | {args.x, args.y}
                      and len({r[c] for r in rows}) > 1]
    series = {}
    try:
        for r in rows:
            name = ", ".join(f"{c}={r[c]}" for c in group_cols) or args.y
            sxv, syv = series.setdefault(name, ([], []))
            sxv.append(float(r[args.x]))
            syv.append(float(r[args.y]))
    except ValueError as exc:
        raise InvalidConfig(f"non-numeric value in {args.csv}: {exc}") from None
    if args.logx and any(v <= 0 for s in series.values() for v in s[0]):
        raise InvalidConfig("log x axis needs positive x values")
    out = Path(args.out) if args.out else Path(args.csv).with_suffix(".svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_svg(series, args.x, args.y, args.logx))
    write_manifest(out, "plot", argv, {"csv": str(args.csv), "x": args.x, "y": args.y, "logx": args.logx,
                                       "group": group_cols}, None, started)
    print(out)
    return EXIT_OK


# --------------------------------------------------------------------------
# dual-solve (debug)


def cmd_dual_solve(args, argv) -> int:
    samples = samples_from_csv(args.csv)
    d = np.atleast_1d(np.asarray([float(v) for v in args.d.split(",")]))
    if samples.m == 1:
        res = solve_dual_single(samples, float(d[0]), args.p_max)
        payload = {"price": res.price.tolist(), "objective": res.objective,
                   "active_breakpoint": res.active_breakpoint, "degenerate": res.degenerate}
    else:
        d = np.broadcast_to(d, (samples.m,))
        if np.any(d <= 0):
            raise InvalidInput("d must be positive")
        n = len(samples)
        sol = solve_lp_bounded(samples, d * n)
        payload = {"price": sol.dual_prices.tolist(),
                   "objective": sol.dual_value(samples.rewards, samples.consumption, d * n) / n,
                   "active_breakpoint": None, "degenerate": False}
    print(json.dumps(payload))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batcholp", description="Batched online LP experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log one line per grid cell")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("table", help="run a table preset and write its CSV")
    p.add_argument("--preset", required=True, help=f"one of {', '.join(sorted(PRESETS))}")
    p.add_argument("--scale", choices=("desk", "full"), default="desk")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="results")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("simulate", help="run the grid described by an INI config")
    p.add_argument("config")
    p.add_argument("--out-dir", default="results")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("batch-size", help="solve B F(B) = C / rate")
    p.add_argument("--dist", default="exp", help="exp, det, or a law such as exp(2)")
    p.add_argument("--param", type=float, default=None, help="rate for exp, value for det")
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--C", type=float, default=1.0)
    p.set_defaults(func=cmd_batch_size)

    p = sub.add_parser("plot", help="line plot of two CSV columns as SVG")
    p.add_argument("csv")
    p.add_argument("--x", default="K")
    p.add_argument("--y", default="regret_mean")
    p.add_argument("--logx", action="store_true")
    p.add_argument("--group", default=None, help="comma-separated grouping columns")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("dual-solve", help="dual price of a sample CSV (reward, a_1..a_m)")
    p.add_argument("csv")
    p.add_argument("--d", required=True, help="average resource, comma-separated for m > 1")
    p.add_argument("--p-max", type=float, default=None)
    p.set_defaults(func=cmd_dual_solve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if getattr(args, "workers", None) is not None and args.workers < 1:
            raise InvalidConfig("--workers must be positive")
        return args.func(args, argv)
    except (InvalidConfig, InvalidInput, UnsupportedSpec, NoRootError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
