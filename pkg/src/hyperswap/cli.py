"""Command-line entry point.

    hyperswap train        --config exp.yaml [--out DIR] [--workers N] [--seed-override K]
    hyperswap diffusion    --config exp.yaml ...
    hyperswap gibbs-check  --config exp.yaml ...
    hyperswap calibrate-c  --config exp.yaml ...
    hyperswap plot         --out RUN_DIR [--which error_curves acceptance ...]

Exit codes: 0 success, 2 config error, 3 divergence, 4 I/O error.
Without --out, runs go to ``$HYPERSWAP_OUT/<mode>-<hash12>`` (default root
``./runs``) unless the config sets ``output_dir``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, config_hash, parse_config
from .optimizer import DivergenceError
from .runner import PLOTS, RunFailed, emit_plots, execute, load_record, with_mode, with_seed_override
from .tempering import CalibrationError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "HYPERSWAP_OUT"

log = logging.getLogger("hyperswap")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperswap", description="Parallel tempering over training hyperparameters.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("train", "grid search or parallel tempering, per the config's mode"),
        ("diffusion", "weight-diffusion experiment over the ladder values"),
        ("gibbs-check", "compare tempered Langevin samples with the exact Gibbs density"),
        ("calibrate-c", "choose the exchange normalization from a preliminary run"),
    ]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", type=Path)
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--seed-override", type=int, metavar="K", help="replica seeds K+i, exchange seed K+M")
    s = sub.add_parser("plot", help="write plot-ready CSV tables for a finished run")
    s.add_argument("--out", type=Path, required=True, help="run directory")
    s.add_argument("--which", nargs="+", choices=PLOTS, help="tables to write (default: all available)")
    s.add_argument("--dest", type=Path)
    return p


def _out_dir(args, cfg) -> Path:
    if args.out is not None:
        return args.out
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get(OUT_ENV, "runs")) / f"{cfg.mode}-{config_hash(cfg)[:12]}"


def _plot(args) -> int:
    rec = load_record(args.out)
    which = args.which
    if which is None:
        which = [w for w in PLOTS if (w in ("error_curves", "exchange_trajectory") and rec.metrics)
                 or (w == "acceptance" and rec.events) or (w == "diffusion" and rec.curves)]
    for path in emit_plots(rec, which, args.dest):
        print(path)
    return EXIT_OK


def _run(args) -> int:
    cfg = parse_config(args.config)
    if args.command == "train":
        if cfg.mode not in ("grid", "pt"):
            raise ConfigError(f"{args.config}: mode {cfg.mode!r} cannot be run by 'train' (use grid or pt)")
    else:
        cfg = with_mode(cfg, args.command)
    if args.seed_override is not None:
        cfg = with_seed_override(cfg, args.seed_override)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    out = _out_dir(args, cfg)
    rec = execute(cfg, out, args.workers)
    print(out)
    if rec.status == "diverged":
        log.error("run finished with divergent replicas: %s", rec.summary.get("diverged"))
        return EXIT_DIVERGED
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _plot(args) if args.command == "plot" else _run(args)
    except (ConfigError, CalibrationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        if args.command == "plot":
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise
    except (OSError, RunFailed) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
