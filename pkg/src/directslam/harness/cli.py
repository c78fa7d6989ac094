"""Command line entry point: ``directslam {simulate,run,eval,full}``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .runner import DataError, evaluate, execute, gospa_params, load_logs, write_run_header

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

log = logging.getLogger("directslam")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="directslam", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-run progress")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in [("simulate", "synthesize snapshots"), ("run", "filter existing snapshots"),
                           ("eval", "write metric CSVs from run logs"), ("full", "simulate, run and eval")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", default="desk",
                       help="config file, or the name of a bundled one (desk, paper); default desk")
        p.add_argument("--output", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--runs", type=int, help="override n_runs")
        p.add_argument("--steps", type=int, help="truncate the trajectory to this many steps")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
        p.add_argument("--resume", action="store_true", help="skip runs whose output already exists")
    return ap


def _resolve(args):
    cfg = load_config(args.config)
    changes = {k: v for k, v in (("base_seed", args.seed), ("n_runs", args.runs), ("steps", args.steps))
               if v is not None}
    if changes:
        try:
            cfg = cfg.replace(**changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    cfg.check()
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        out = args.output
        if args.command in ("simulate", "run", "full"):
            write_run_header(cfg, out)
            execute(cfg, out, simulate=args.command != "run", run=args.command != "simulate",
                    jobs=args.jobs, resume=args.resume)
        if args.command in ("eval", "full"):
            files = evaluate(load_logs(out, cfg.n_runs), out, gospa_params(cfg))
            for f in files:
                print(f)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
