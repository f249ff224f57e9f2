"""Command line front end: train, sweep, analyze, evaluate.

Exit codes: 0 on success, 1 when an analysis assertion fails, 2 on usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import sys

from .harness import (ANALYSES, ConfigError, SweepSpec, apply_paper_scale,
                      evaluate_checkpoint, execute_run, load_config,
                      run_analysis, run_sweep, summarize_rows)
from .training import TrainConfig, format_float


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dflm",
        description="Derivative-free loss solver for elliptic problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train_p = sub.add_parser("train", help="one training run from a config file")
    train_p.add_argument("--config", required=True, help="TOML config path")
    train_p.add_argument("--out", default="train_run", help="output directory")
    train_p.add_argument("--checkpoint-stride", type=int, default=0,
                         help="also snapshot the network every N iterations")
    train_p.add_argument("--paper-scale", action="store_true",
                         help="full-scale protocol: 1.5e5 iterations, "
                              "3x200 net, 1001 point evaluation grid")

    sweep_p = sub.add_parser("sweep", help="grid of runs over dt and walkers")
    sweep_p.add_argument("--config", required=True, help="TOML config path")
    sweep_p.add_argument("--bias-mode", action="store_true",
                         help="freeze the exact solution instead of training")
    sweep_p.add_argument("--workers", type=int, default=None,
                         help="parallel cells (capped by DFLM_WORKERS)")
    sweep_p.add_argument("--paper-scale", action="store_true",
                         help="full-scale protocol plus ten trials")

    ana_p = sub.add_parser("analyze", help="quantitative verification reports")
    ana_p.add_argument("which", choices=ANALYSES)
    ana_p.add_argument("--out", default="analysis_out", help="report directory")
    ana_p.add_argument("--u", choices=("linear", "sine"), default=None,
                       help="test function for the bias analysis")
    ana_p.add_argument("--m", type=int, default=None, help="wavenumber")
    ana_p.add_argument("--dt", type=float, default=None)
    ana_p.add_argument("--dt-values", type=float, nargs="+", default=None)
    ana_p.add_argument("--ns-values", type=int, nargs="+", default=None)
    ana_p.add_argument("--n-outer", type=int, default=None)
    ana_p.add_argument("--n-walkers", type=int, default=None)
    ana_p.add_argument("--epsilon", type=float, nargs="+", default=None)
    ana_p.add_argument("--grid", type=int, default=None)
    ana_p.add_argument("--seed", type=int, default=None)

    eval_p = sub.add_parser("evaluate", help="relative L2 error of a checkpoint")
    eval_p.add_argument("--checkpoint", required=True)
    eval_p.add_argument("--grid", type=int, default=201)
    eval_p.add_argument("--m", type=int, default=1)
    return parser


# which CLI flags each analysis accepts, and the keyword they map to
_ANALYSIS_FLAGS = {
    "bias": {"u": "u_name", "m": "m", "dt_values": "dt_values",
             "ns_values": "ns_values", "n_outer": "n_outer", "seed": "seed"},
    "chebyshev": {"dt": "dt", "n_walkers": "n_walkers", "epsilon": "epsilons",
                  "seed": "seed"},
    "folded-normal": {"seed": "seed"},
    "learning-bound": {"m": "m", "dt": "dt", "seed": "seed"},
    "decay": {"m": "m", "dt_values": "dt_values", "grid": "grid_n"},
}


def _analysis_params(args: argparse.Namespace) -> dict:
    params = {}
    for attr, kwarg in _ANALYSIS_FLAGS[args.which].items():
        value = getattr(args, attr)
        if value is not None:
            params[kwarg] = value
    return params


def _cmd_train(args) -> int:
    config = load_config(args.config)
    if not isinstance(config, TrainConfig):
        raise ConfigError(f"{args.config}: holds a sweep; use dflm sweep")
    if args.paper_scale:
        config = apply_paper_scale(config)
    rows = execute_run(config, args.out, checkpoint_stride=args.checkpoint_stride)
    _, final_rel, _ = summarize_rows(rows)
    if final_rel is not None:
        print(f"relative_l2_error {format_float(final_rel)}")
    print(f"run written to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    spec = load_config(args.config)
    if not isinstance(spec, SweepSpec):
        raise ConfigError(
            f"{args.config}: holds a single run; use dflm train "
            "(or add dt_values / ns_values / trials)")
    if args.paper_scale:
        spec = apply_paper_scale(spec)
    summary = run_sweep(spec, bias_mode=args.bias_mode, workers=args.workers)
    print(f"summary written to {summary}")
    return 0


def _cmd_analyze(args) -> int:
    passed = run_analysis(args.which, args.out, **_analysis_params(args))
    print(f"{args.which}: {'pass' if passed else 'FAIL'} "
          f"(reports in {args.out})")
    return 0 if passed else 1


def _cmd_evaluate(args) -> int:
    error = evaluate_checkpoint(args.checkpoint, args.grid, args.m)
    print(f"relative_l2_error {format_float(error)}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "sweep": _cmd_sweep,
        "analyze": _cmd_analyze,
        "evaluate": _cmd_evaluate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"dflm: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"dflm: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
