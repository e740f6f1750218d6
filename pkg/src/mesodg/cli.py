"""Command-line entry point.

Subcommands: solve (single case), bench (table reproduction), scaling,
proba, error-vs-rank, trace-constant.  Exit code 0 on success, 2 when a
case fails to converge or a study check fails, 1 on configuration
errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .harness import (ConfigError, ExperimentConfig, load_config, run_case,
                      run_error_vs_rank, run_proba_study, run_scaling,
                      trace_constant_report, _solve_case)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_common(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, help="base 64-bit seed")
    p.add_argument("--out", help="output directory for CSV files")
    p.add_argument("--threads", type=int, help="worker pool size")
    p.add_argument("--max-dofs", type=int,
                   help="cap on direct-solver problem size")
    p.add_argument("--pattern", help="conductivity pattern")
    p.add_argument("--cells", help="comma-separated cell counts")
    p.add_argument("--p", type=float, help="defect probability")
    p.add_argument("--tol", type=float, help="relative residual tolerance")
    p.add_argument("--source", choices=("corrector", "uniform", "peak"))
    p.add_argument("--sigma-policy",
                   choices=("face_density", "auto_2x_sigma_minus",
                            "explicit"))
    p.add_argument("--sigma", type=float,
                   help="penalty value (explicit) or density (face_density)")
    p.add_argument("--m-variant", choices=("mean_penalty", "cell_mass"))
    p.add_argument("--max-rank", type=int)
    p.add_argument("--samples", type=int, help="Monte Carlo sample count")
    p.add_argument("--p-grid", help="comma-separated defect probabilities")


def _build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    updates = {}
    mapping = {"seed": "seed", "out": "out_dir", "threads": "threads",
               "max_dofs": "max_dofs", "pattern": "pattern", "p": "p",
               "tol": "tolerance", "source": "source", "sigma": "sigma",
               "sigma_policy": "sigma_policy", "m_variant": "m_variant",
               "max_rank": "max_rank", "samples": "samples"}
    for arg_name, field_name in mapping.items():
        val = getattr(args, arg_name, None)
        if val is not None:
            updates[field_name] = val
    if getattr(args, "cells", None):
        updates["sizes"] = tuple(int(x) for x in args.cells.split(","))
    if getattr(args, "p_grid", None):
        updates["p_grid"] = tuple(float(x) for x in args.p_grid.split(","))
    return replace(cfg, **updates).validate()


def _checks_ok(checks: dict) -> bool:
    return all(v for k, v in checks.items() if isinstance(v, bool))


def main(argv=None) -> int:
    parser = _Parser(prog="mesodg",
                     description="Greedy low-rank SWIP dG solver for "
                                 "quasi-periodic diffusion")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("solve", "solve a single case"),
                       ("bench", "table reproduction benchmark"),
                       ("scaling", "domain-size scaling study"),
                       ("proba", "defect-probability Monte Carlo study"),
                       ("error-vs-rank", "residual vs rank sweep"),
                       ("trace-constant", "print trace constant and "
                                          "penalty bound")):
        _add_common(sub.add_parser(name, help=text))

    try:
        args = parser.parse_args(argv)
        cfg = _build_config(args)

        if args.command == "solve":
            res = _solve_case(cfg, cfg.sizes[0])
            print(f"pattern={cfg.pattern} n_cells={cfg.sizes[0]} "
                  f"rank={res['rank']} residual={res['residual']:.4g} "
                  f"converged={res['converged']} sigma={res['sigma']:.6g} "
                  f"seconds={res['greedy_seconds']:.3f}")
            return 0 if res["converged"] else 2

        if args.command == "bench":
            rows = run_case(cfg)
            for row in rows:
                print(",".join(str(row[c]) for c in
                               ("pattern", "n_cells", "method", "rank",
                                "residual", "converged")))
            print(f"wrote {cfg.out_dir}/bench.csv")
            greedy_rows = [r for r in rows if r["method"] == "greedy"]
            return 0 if all(r["converged"] for r in greedy_rows) else 2

        if args.command == "scaling":
            rows, checks = run_scaling(cfg)
            for row in rows:
                print(f"source={row['source']} n_cells={row['n_cells']} "
                      f"rank={row['rank']} seconds={row['seconds']:.3f}")
            print(f"checks: {checks}")
            return 0 if _checks_ok(checks) else 2

        if args.command == "proba":
            rows, checks = run_proba_study(cfg)
            for row in rows:
                print(f"p={row['p']} mean_rank={row['mean_rank']:.3f} "
                      f"var_rank={row['var_rank']:.3f} "
                      f"failures={row['failures']}")
            print(f"checks: {checks}")
            return 0 if _checks_ok(checks) else 2

        if args.command == "error-vs-rank":
            rows, checks = run_error_vs_rank(cfg)
            for row in rows:
                print(f"rank={row['rank']} residual={row['residual']:.6g}")
            print(f"checks: {checks}")
            return 0 if _checks_ok(checks) else 2

        if args.command == "trace-constant":
            rep = trace_constant_report(cfg)
            print(f"trace_constant={rep['trace_constant']:.6g} "
                  f"sigma_minus={rep['sigma_minus']:.6g} "
                  f"sigma={rep['sigma']:.6g} n_cells={rep['n_cells']}")
            return 0

        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
