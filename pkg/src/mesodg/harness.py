"""Experiment driver: benchmark tables, scaling, defect-probability and
error-vs-rank studies, with deterministic CSV output.

Each experiment builds quasi-periodic media from a seeded, cell-indexed
Bernoulli draw (so growing domains share defect prefixes), assembles the
separated SWIP operator, runs the greedy solver, and optionally the
direct solver for comparison.  Every CSV carries a comment line with the
full configuration and its hash; rows are deterministic for a fixed
(config, seed) pair apart from wall-time columns.

The penalty parameter is configurable: 'face_density' (default) scales
a base density with the largest face measure, sigma = eta * |F|+, which
keeps the jump penalty per unit face length uniform across cell shapes;
'auto_2x_sigma_minus' uses twice the coercivity lower bound (safe but
very conservative for high-contrast media); 'explicit' uses a given
value.  The sigma actually used is recorded in every run.
"""

from __future__ import annotations

import functools
import hashlib
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .cell import build_cell_space, max_trace_constant
from .grid import build_grid
from .media import (bernoulli_conductivity, cell_bounds, corrector_source,
                    pattern, peak_source, svd_compress, uniform_source)
from .operator import (assemble_operator, assemble_rhs, compute_weights,
                       sigma_lower_bound)
from .reference import compare, direct_dg_solve
from .solver import GreedyConfig, greedy_solve

PATTERN_ALIASES = {
    "missing_fibre": "missing_fibre", "missing_fibres": "missing_fibre",
    "undulating_fibre": "undulating_fibre",
    "undulating_fibres": "undulating_fibre",
    "missing_inclusion": "missing_inclusion",
    "missing_inclusions": "missing_inclusion",
}
SOURCES = ("corrector", "uniform", "peak")
SIGMA_POLICIES = ("face_density", "auto_2x_sigma_minus", "explicit")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    pattern: str = "missing_inclusion"
    sizes: tuple[int, ...] = (25, 100, 225)
    p: float = 0.1
    seed: int = 26
    tolerance: float = 1e-3
    sigma_policy: str = "face_density"
    sigma: float = 20.0            # explicit value, or density eta
    m_variant: str = "mean_penalty"
    source: str = "corrector"
    max_rank: int = 64
    samples: int = 100
    n_el: tuple[int, int] = (20, 20)
    out_dir: str = "out"
    threads: int = 1
    max_dofs: int = 120_000
    p_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    residual_norm: str = "h1_dual"

    def validate(self) -> "ExperimentConfig":
        if self.pattern not in PATTERN_ALIASES:
            raise ConfigError(f"unknown pattern {self.pattern!r}")
        if self.source not in SOURCES:
            raise ConfigError(f"unknown source {self.source!r}")
        if self.sigma_policy not in SIGMA_POLICIES:
            raise ConfigError(f"unknown sigma_policy {self.sigma_policy!r}")
        if self.m_variant not in ("mean_penalty", "cell_mass"):
            raise ConfigError(f"unknown m_variant {self.m_variant!r}")
        if self.residual_norm not in ("euclidean", "h1_dual"):
            raise ConfigError(f"unknown residual_norm {self.residual_norm!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"p must lie in [0, 1], got {self.p}")
        if self.tolerance < 0:
            raise ConfigError(f"tolerance must be nonnegative")
        if any(s <= 0 for s in self.sizes):
            raise ConfigError(f"sizes must be positive, got {self.sizes}")
        if self.max_rank < 1 or self.samples < 1 or self.threads < 1:
            raise ConfigError("max_rank, samples and threads must be >= 1")
        return self

    def flat_items(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            out.append((f.name, str(v)))
        return out

    def config_hash(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in self.flat_items())
        return hashlib.sha256(text.encode()).hexdigest()[:12]


_PARSERS = {
    "pattern": str, "p": float, "seed": int, "tolerance": float,
    "sigma_policy": str, "sigma": float, "m_variant": str, "source": str,
    "max_rank": int, "samples": int, "out_dir": str, "threads": int,
    "max_dofs": int, "residual_norm": str,
    "sizes": lambda s: tuple(int(x) for x in s.split(",") if x.strip()),
    "n_el": lambda s: tuple(int(x) for x in s.split(",") if x.strip()),
    "p_grid": lambda s: tuple(float(x) for x in s.split(",") if x.strip()),
}


def parse_config(text: str, base: ExperimentConfig | None = None
                 ) -> ExperimentConfig:
    """Parse a flat key=value config; unknown keys are rejected by name."""
    cfg = base or ExperimentConfig()
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, "
                              f"got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _PARSERS:
            raise ConfigError(f"unknown config key: {key}")
        try:
            updates[key] = _PARSERS[key](val.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {val.strip()!r} "
                              f"({exc})") from exc
    return replace(cfg, **updates).validate()


def load_config(path, base: ExperimentConfig | None = None
                ) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base)


def geometry_for(pattern_kind: str, n_cells: int,
                 n_el: tuple[int, int]):
    """Grid and cell space of a test case.

    The fibre pattern tiles a single row of tall cells; the 2D patterns
    tile a square grid of unit cells (n_cells must then be a square).
    """
    kind = PATTERN_ALIASES[pattern_kind]
    if kind == "missing_fibre":
        return (build_grid(n_cells, 1, (1.0, 5.0)),
                _cached_space(tuple(n_el), (1.0, 5.0)))
    side = int(round(np.sqrt(n_cells)))
    if side * side != n_cells:
        raise ConfigError(f"2D patterns need a square cell count, "
                          f"got {n_cells}")
    return (build_grid(side, side, (1.0, 1.0)),
            _cached_space(tuple(n_el), (1.0, 1.0)))


@functools.lru_cache(maxsize=8)
def _cached_space(n_el, extent):
    return build_cell_space(n_el, extent)


@functools.lru_cache(maxsize=8)
def _cached_trace_constant(n_el, extent) -> float:
    return max_trace_constant(_cached_space(n_el, extent))


@dataclass
class CaseProblem:
    """Assembled operator and right-hand side of one experiment case."""

    grid: object
    space: object
    conductivity: object
    op: object
    rhs: object
    sigma: float
    sigma_minus: float
    trace_constant: float


def resolve_sigma(cfg: ExperimentConfig, grid, space, conductivity):
    """Penalty value and coercivity bound for a sampled medium."""
    c_trace = _cached_trace_constant(tuple(space.n_el), space.extent)
    weights = compute_weights(grid, cell_bounds(conductivity))
    s_minus = sigma_lower_bound(c_trace, weights)
    if cfg.sigma_policy == "auto_2x_sigma_minus":
        sigma = 2.0 * s_minus
    elif cfg.sigma_policy == "face_density":
        sigma = cfg.sigma * weights.face_measure_max
    else:
        sigma = cfg.sigma
    return sigma, s_minus, c_trace


def build_problem(cfg: ExperimentConfig, n_cells: int,
                  seed: int | None = None,
                  source: str | None = None) -> CaseProblem:
    seed = cfg.seed if seed is None else seed
    source = source or cfg.source
    grid, space = geometry_for(cfg.pattern, n_cells, cfg.n_el)
    k1, k2 = pattern(PATTERN_ALIASES[cfg.pattern], space)
    cond = bernoulli_conductivity(grid, k1, k2, cfg.p, seed)
    if source == "corrector":
        f = corrector_source(cond, space)
    elif source == "uniform":
        f = uniform_source(grid, space)
    else:
        f = svd_compress(peak_source(grid, space), 1e-6)
    sigma, s_minus, c_trace = resolve_sigma(cfg, grid, space, cond)
    op = assemble_operator(grid, space, cond, sigma, cfg.m_variant)
    rhs = assemble_rhs(grid, space, f)
    return CaseProblem(grid=grid, space=space, conductivity=cond, op=op,
                       rhs=rhs, sigma=sigma, sigma_minus=s_minus,
                       trace_constant=c_trace)


def _greedy_cfg(cfg: ExperimentConfig, seed: int | None = None
                ) -> GreedyConfig:
    return GreedyConfig(seed=cfg.seed if seed is None else seed,
                        residual_norm=cfg.residual_norm)


def _solve_case(cfg: ExperimentConfig, n_cells: int,
                seed: int | None = None, source: str | None = None,
                tol: float | None = None, with_direct: bool = False):
    prob = build_problem(cfg, n_cells, seed=seed, source=source)
    tol = cfg.tolerance if tol is None else tol
    t0 = time.perf_counter()
    u, trace = greedy_solve(prob.op, prob.rhs, tol, cfg.max_rank,
                            _greedy_cfg(cfg, seed))
    greedy_seconds = time.perf_counter() - t0
    out = {"n_cells": n_cells, "rank": u.rank,
           "residual": trace.final_residual, "converged": trace.converged,
           "greedy_seconds": greedy_seconds, "sigma": prob.sigma,
           "trace": trace, "solution": u}
    if with_direct and n_cells * prob.space.dim <= cfg.max_dofs:
        t0 = time.perf_counter()
        direct = direct_dg_solve(prob.grid, prob.space, prob.conductivity,
                                 _source_field(cfg, prob, source),
                                 prob.sigma, cfg.m_variant,
                                 max_dofs=cfg.max_dofs)
        out["direct_seconds"] = time.perf_counter() - t0
        out["energy_error"] = compare(u, direct, prob.op)["energy"]
        out["direct"] = direct
    return out


def _source_field(cfg, prob, source):
    source = source or cfg.source
    if source == "corrector":
        return corrector_source(prob.conductivity, prob.space)
    if source == "uniform":
        return uniform_source(prob.grid, prob.space)
    return svd_compress(peak_source(prob.grid, prob.space), 1e-6)


def _pool_map(fn, args_list, threads: int):
    """Map preserving submission order; pool sized by the config."""
    if threads <= 1 or len(args_list) <= 1:
        return [fn(*a) for a in args_list]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, *a) for a in args_list]
        return [f.result() for f in futures]


def write_csv(path, columns, rows, cfg: ExperimentConfig) -> None:
    """CSV with a config comment line; deterministic field formatting."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    flat = " ".join(f"{k}={v}" for k, v in cfg.flat_items())
    lines = [f"# config {cfg.config_hash()} {flat}", ",".join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            v = row.get(col, "")
            if isinstance(v, float):
                cells.append(f"{v:.3f}" if col.endswith("seconds")
                             else f"{v:.10g}")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_case(cfg: ExperimentConfig, write: bool = True):
    """Benchmark rows (greedy and, where feasible, direct) per grid size."""
    cfg.validate()
    results = _pool_map(lambda n: _solve_case(cfg, n, with_direct=True),
                        [(n,) for n in cfg.sizes], cfg.threads)
    rows = []
    for res in results:
        rows.append({"pattern": cfg.pattern, "n_cells": res["n_cells"],
                     "method": "greedy", "seconds": res["greedy_seconds"],
                     "rank": res["rank"], "residual": res["residual"],
                     "converged": res["converged"],
                     "energy_error": res.get("energy_error", ""),
                     "sigma": res["sigma"]})
        if "direct" in res:
            rows.append({"pattern": cfg.pattern, "n_cells": res["n_cells"],
                         "method": "direct",
                         "seconds": res["direct_seconds"], "rank": "",
                         "residual": res["direct"].linear_residual,
                         "converged": True, "energy_error": 0.0,
                         "sigma": res["sigma"]})
    if write:
        write_csv(os.path.join(cfg.out_dir, "bench.csv"),
                  ("pattern", "n_cells", "method", "seconds", "rank",
                   "residual"), rows, cfg)
    return rows


def run_scaling(cfg: ExperimentConfig, write: bool = True):
    """Greedy cost and rank over growing domains for one source term.

    Returns the rows and a check dict asserting the rank plateau: the
    rank at the largest size is at most the rank at the second-largest
    plus 2.
    """
    cfg.validate()
    if len(cfg.sizes) < 2:
        raise ConfigError("scaling study needs at least two sizes")
    results = _pool_map(lambda n: _solve_case(cfg, n),
                        [(n,) for n in cfg.sizes], cfg.threads)
    rows = [{"source": cfg.source, "n_cells": r["n_cells"],
             "seconds": r["greedy_seconds"], "rank": r["rank"],
             "residual": r["residual"], "converged": r["converged"]}
            for r in results]
    ranks = [r["rank"] for r in rows]
    checks = {"rank_plateau": ranks[-1] <= ranks[-2] + 2,
              "all_converged": all(r["converged"] for r in rows)}
    if write:
        write_csv(os.path.join(cfg.out_dir, f"scaling_{cfg.source}.csv"),
                  ("source", "n_cells", "seconds", "rank"), rows, cfg)
    return rows, checks


def run_proba_study(cfg: ExperimentConfig, write: bool = True):
    """Mean and variance of the converged rank over defect probabilities.

    Samples use independent seeds derived from the config seed; failed
    samples are excluded and counted.  Checks that the mean rank at the
    endpoints p = 0 and p = 1 stays strictly below the mid-probability
    mean (periodic media have rank-1 solutions).
    """
    cfg.validate()
    if cfg.samples < 2:
        raise ConfigError("probability study needs samples >= 2")
    n_cells = cfg.sizes[0]

    def one(p_val, sample):
        seed = int(np.random.SeedSequence(
            entropy=(cfg.seed, int(round(p_val * 10 ** 9)), sample)
        ).generate_state(1)[0])
        sub = replace(cfg, p=p_val)
        try:
            res = _solve_case(sub, n_cells, seed=seed)
            return res["rank"] if res["converged"] else None
        except Exception:
            return None

    rows = []
    for p_val in cfg.p_grid:
        ranks = _pool_map(one, [(p_val, s) for s in range(cfg.samples)],
                          cfg.threads)
        ok = [r for r in ranks if r is not None]
        rows.append({"p": p_val, "n_samples": len(ok),
                     "mean_rank": float(np.mean(ok)) if ok else float("nan"),
                     "var_rank": float(np.var(ok)) if ok else float("nan"),
                     "failures": cfg.samples - len(ok)})
    by_p = {row["p"]: row["mean_rank"] for row in rows}
    mid = [v for p, v in by_p.items() if 0.0 < p < 1.0]
    checks = {"endpoints_low": bool(mid) and
              all(by_p.get(p, 0.0) < min(mid) for p in (0.0, 1.0)
                  if p in by_p),
              "no_failures": all(row["failures"] == 0 for row in rows)}
    if write:
        write_csv(os.path.join(cfg.out_dir, "proba.csv"),
                  ("p", "n_samples", "mean_rank", "var_rank", "failures"),
                  rows, cfg)
    return rows, checks


def run_error_vs_rank(cfg: ExperimentConfig, write: bool = True):
    """Residual per rank from a single zero-tolerance greedy sweep.

    Checks the downward trend: the least-squares slope of log10(residual)
    against rank must be negative.
    """
    cfg.validate()
    n_cells = cfg.sizes[-1]
    res = _solve_case(cfg, n_cells, tol=0.0)
    trace = res["trace"]
    rows = [{"rank": r.rank, "residual": r.residual} for r in trace.rows]
    xs = np.array([r["rank"] for r in rows], dtype=float)
    ys = np.log10(np.maximum([r["residual"] for r in rows], 1e-300))
    slope = float(np.polyfit(xs, ys, 1)[0]) if len(rows) > 1 else 0.0
    checks = {"slope": slope, "slope_negative": slope < 0.0}
    if write:
        write_csv(os.path.join(cfg.out_dir, "error_vs_rank.csv"),
                  ("rank", "residual"), rows, cfg)
    return rows, checks


def trace_constant_report(cfg: ExperimentConfig) -> dict:
    """Trace constant and penalty lower bound for the configured medium."""
    cfg.validate()
    n_cells = cfg.sizes[0]
    grid, space = geometry_for(cfg.pattern, n_cells, cfg.n_el)
    k1, k2 = pattern(PATTERN_ALIASES[cfg.pattern], space)
    cond = bernoulli_conductivity(grid, k1, k2, cfg.p, cfg.seed)
    sigma, s_minus, c_trace = resolve_sigma(cfg, grid, space, cond)
    return {"trace_constant": c_trace, "sigma_minus": s_minus,
            "sigma": sigma, "n_cells": n_cells}
