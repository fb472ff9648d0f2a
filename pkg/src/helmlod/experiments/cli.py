"""Command line: ``helmlod run|decay|list-presets``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import OUT_ENV, ConfigError, load_config, preset, preset_names, _PRESETS
from .decay import run_decay_study
from .sweep import run_sweep


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="helmlod", description="Multiscale Petrov-Galerkin Helmholtz sweeps")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run an error sweep")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset")
    src.add_argument("--config", help="key = value file")
    run.add_argument("--desk", action="store_true", help="lower the 2D fine scale to h = 2^-7")
    run.add_argument("--workers", type=int)
    run.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
    run.add_argument("--no-timings", action="store_true", help="leave timing columns empty")

    dec = sub.add_parser("decay", parents=[common], help="corrector decay study for both interpolation kinds")
    dsrc = dec.add_mutually_exclusive_group(required=True)
    dsrc.add_argument("--preset")
    dsrc.add_argument("--config")
    dec.add_argument("--desk", action="store_true")
    dec.add_argument("--out")

    sub.add_parser("list-presets", parents=[common], help="show the named sweeps")
    return p


def _config(args):
    overrides = dict(workers=getattr(args, "workers", None), out=args.out)
    if getattr(args, "no_timings", False):
        overrides["timings"] = False
    if args.preset:
        cfg = preset(args.preset, **overrides)
    else:
        cfg = load_config(args.config, overrides)
    return cfg.desk() if args.desk else cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-presets":
        for name in preset_names():
            print(f"{name:16s} {_PRESETS[name].get('note', '')}")
        return 0
    try:
        cfg = _config(args)
    except (ConfigError, OSError) as exc:
        print(f"helmlod: {exc}", file=sys.stderr)
        return 2
    if args.command == "run":
        path = run_sweep(cfg)
        print(path)
    else:
        for path in run_decay_study(cfg):
            print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
