"""Command-line entry point.

Subcommands:

    otfsq sweep      Monte Carlo SNR sweep -> CSV + metadata + gnuplot script
    otfsq iter-trace per-iteration NMSE at a fixed SNR
    otfsq bench      wall-time ladders for the fast and dense inversion paths
    otfsq validate   run the self-check oracle families

A config file (key = value lines) provides base settings; any key can be
overridden by a flag of the same name. Exit status is 0 on success, 1 on
validation failure, and 2 on bad input or I/O errors.
"""

from __future__ import annotations

import argparse
import sys

from .config import ALGORITHMS, ExperimentConfig, parse_config_file
from .sim import run_bench, run_iteration_trace, run_sweep
from .validate import run_validate


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="alias for --master_seed")
    parser.add_argument("--out", help="output CSV path")
    parser.add_argument("--workers", type=int, help="trial worker processes")
    parser.add_argument("--m", type=int)
    parser.add_argument("--n", type=int)
    parser.add_argument("--p", type=int)
    parser.add_argument("--l_max", type=int)
    parser.add_argument("--k_max", type=int)
    parser.add_argument("--constellation")
    parser.add_argument("--bits", help="comma list, e.g. '3,inf'")
    parser.add_argument("--snr_db", help="comma list of dB values")
    parser.add_argument("--algorithms", help=f"comma list from {ALGORITHMS}")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--master_seed", type=int)
    parser.add_argument("--max_iters", type=int)
    parser.add_argument("--damping", type=float)
    parser.add_argument("--gamp_damping", type=float)
    parser.add_argument("--stop_tol", type=float)
    parser.add_argument("--v_min", type=float)
    parser.add_argument("--v_max", type=float)
    parser.add_argument("--step_override", type=float)
    parser.add_argument("--trace_snr_db", type=float)
    parser.add_argument("--bench_mn", help="comma list of grid sizes")
    parser.add_argument("--bench_dense_mn", help="comma list of grid sizes")
    parser.add_argument("--bench_reps", type=int)


_LIST_KEYS = {"bits", "snr_db", "algorithms", "bench_mn", "bench_dense_mn"}


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    from .config import _PARSERS  # flag values reuse the config-file parsers

    overrides: dict = {}
    if args.config:
        overrides.update(parse_config_file(args.config))
    for key, parser_fn in _PARSERS.items():
        value = getattr(args, key, None)
        if value is None:
            continue
        overrides[key] = parser_fn(value) if key in _LIST_KEYS or isinstance(value, str) else value
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    return ExperimentConfig().with_overrides(**overrides)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="otfsq", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, a_help in (
        ("sweep", "Monte Carlo SNR sweep"),
        ("iter-trace", "per-iteration NMSE trace at a fixed SNR"),
        ("bench", "inversion wall-time ladders and fitted slopes"),
        ("validate", "run the self-check oracle families"),
    ):
        p = sub.add_parser(name, help=a_help)
        _add_common_flags(p)

    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            ok = run_validate(out_path=args.out)
            return 0 if ok else 1
        cfg = build_config(args)
        if args.command == "sweep":
            rows = run_sweep(cfg)
            print(f"wrote {len(rows)} rows to {cfg.out}")
        elif args.command == "iter-trace":
            rows = run_iteration_trace(cfg)
            print(f"wrote {len(rows)} rows to {cfg.out}")
        elif args.command == "bench":
            run_bench(cfg)
            print(f"wrote benchmark to {cfg.out}")
        return 0
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
