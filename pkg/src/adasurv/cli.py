"""Command-line front end.

Three subcommands: ``simulate`` runs a JSON experiment config and writes
per-seed CSV traces plus a JSON summary, ``policy`` prints an allocation
policy over the covariate grid, and ``reproduce`` emits the plot-ready
series for a named figure preset. Exit codes: 0 on success, 2 on config
errors, 3 on numerical failures.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .core import OverlapError
from .dgp import CalibrationError
from .harness import (
    FIGURE_PRESETS,
    ConfigError,
    NumericalFailure,
    load_config,
    policy_table,
    reproduce_figures,
    simulate,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adasurv",
        description="Censoring-aware adaptive experimentation for survival outcomes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an experiment config")
    sim.add_argument("--config", required=True, help="path to a JSON experiment config")
    sim.add_argument("--seeds", type=int, default=None,
                     help="override the seed count (1..N)")
    sim.add_argument("--out", default=None, help="output directory for CSV traces")
    sim.add_argument("--threads", type=int, default=1)

    pol = sub.add_parser("policy", help="emit an allocation policy over the covariate grid")
    pol.add_argument("--dgp", choices=("synthetic", "twins"), default="synthetic")
    pol.add_argument("--criterion", choices=("a", "d", "e", "neyman", "uniform"), default="a")
    pol.add_argument("--grid", type=int, default=101)
    pol.add_argument("--alpha", type=float, default=0.05)
    pol.add_argument("--out", default=None, help="write CSV here instead of stdout")

    rep = sub.add_parser("reproduce", help="emit plot-ready series for a figure preset")
    rep.add_argument("--preset", required=True, choices=FIGURE_PRESETS)
    rep.add_argument("--out", required=True)
    rep.add_argument("--threads", type=int, default=1)
    rep.add_argument("--seeds", type=int, default=None, help="override the seed count")

    return parser


_CRITERION_NAMES = {
    "a": "A_OPT", "d": "D_OPT", "e": "E_OPT", "neyman": "NEYMAN_NAIVE", "uniform": "UNIFORM",
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            config = load_config(args.config)
            if args.seeds is not None:
                from dataclasses import replace

                config = replace(config, seeds=tuple(range(1, args.seeds + 1)))
            summary = simulate(config, args.out, threads=args.threads)
            for variant, row in summary.final_round_table().items():
                print(f"{variant}: final MSE {row['mse']:.6g} "
                      f"(coverage {row['coverage']:.3f})")
            return EXIT_OK

        if args.command == "policy":
            xs, pi = policy_table(args.dgp.upper(), _CRITERION_NAMES[args.criterion],
                                  args.grid, args.alpha)
            lines = ["x,pi"] + [f"{x:.10g},{p:.10g}" for x, p in zip(xs, pi)]
            text = "\n".join(lines) + "\n"
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK

        paths = reproduce_figures(args.preset, args.out, threads=args.threads,
                                  seeds=range(1, args.seeds + 1) if args.seeds else None)
        for path in paths:
            print(path)
        return EXIT_OK

    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (OverlapError, CalibrationError, NumericalFailure,
            np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
