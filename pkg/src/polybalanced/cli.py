"""Command-line interface: ``polybalanced run`` and ``polybalanced report``.

Exit codes: 0 success, 1 a check failed (including non-convergence),
2 invalid config, 3 quadrature failure, 4 missing result files.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .integrator import QuadratureError
from .runner import MissingFiles, default_workers, report, run_config, WORKERS_ENV

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_QUADRATURE, EXIT_MISSING = 0, 1, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
    p = argparse.ArgumentParser(prog="polybalanced", description=__doc__.splitlines()[0],
                                parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run every level of an experiment config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (default: config output_dir or runs/<name>)")
    r.add_argument("--workers", type=int, default=None,
                   help=f"parallel level cells (default: ${WORKERS_ENV} or 1)")
    r.add_argument("--resume", action="store_true", help="reuse finished cells with a matching config hash")
    rep = sub.add_parser("report", parents=[common], help="print the tables of a finished run")
    rep.add_argument("manifest")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        try:
            cfg = load_config(args.config)
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        workers = default_workers() if args.workers is None else args.workers
        try:
            outcome = run_config(cfg, args.out, workers=workers, resume=args.resume)
        except QuadratureError as exc:
            print(f"quadrature failure: {exc}", file=sys.stderr)
            return EXIT_QUADRATURE
        for name, o in outcome.outcomes.items():
            print(f"{o.status.upper()}: {name} ({o.detail})")
        print(f"manifest: {outcome.manifest_path}")
        return outcome.exit_code
    try:
        text = report(args.manifest)
    except MissingFiles as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
