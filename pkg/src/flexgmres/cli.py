"""Command-line entry point: ``flexgmres {sharp,stagnate,solve,tables,bound}``.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import experiments as ex
from .adversarial import InfeasibleStepError
from .io import MatrixMarketError
from .solver import PreconditionerMismatch

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage, which collides with the numerical-failure code
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flexgmres", description="Flexible GMRES experiments and bounds.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, matrix=False):
        p.add_argument("--mu", type=float, help="inner residual tolerance")
        p.add_argument("--outer", type=int, help="outer FGMRES iterations")
        p.add_argument("--inner", type=int, help="inner GMRES iteration count or cap")
        p.add_argument("--n", type=int, help="dimension N (grid size for solve)")
        p.add_argument("--out", help="output file")
        p.add_argument("--seed", type=int, default=0)
        if matrix:
            p.add_argument("--matrix", help="Matrix Market file (default: generated convection-diffusion)")
            p.add_argument("--peclet", type=float, default=10.0)

    common(sub.add_parser("sharp", help="worst-case system attaining the bound"))
    common(sub.add_parser("stagnate", help="system that stagnates for mu > 1/2"))
    common(sub.add_parser("solve", help="FGMRES-GMRES on a sparse matrix"), matrix=True)
    tables = sub.add_parser("tables", help="print the rate and stalling-index tables")
    tables.add_argument("--out")
    bound = sub.add_parser("bound", help="per-step bounds for one mu")
    bound.add_argument("--mu", type=float)
    bound.add_argument("--outer", type=int)
    bound.add_argument("--out")
    return parser


def _config(args) -> ex.ExperimentConfig:
    keys = ("mu", "outer", "inner", "n", "matrix", "out", "seed", "peclet")
    return ex.ExperimentConfig(args.command, **{k: getattr(args, k) for k in keys if hasattr(args, k)})


def _summary(record) -> str:
    return "\n".join(f"{k}: {v}" for k, v in record.meta.items())


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    try:
        cfg = _config(args)
        if args.command == "tables":
            print(ex.cmd_tables(cfg), end="")
            return EXIT_OK
        if args.command == "bound":
            print(ex.cmd_bound(cfg), end="")
            return EXIT_OK
        record = {"sharp": ex.cmd_sharp, "stagnate": ex.cmd_stagnate, "solve": ex.cmd_solve}[args.command](cfg)
    except (MatrixMarketError, OSError) as err:
        print(f"flexgmres: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except (np.linalg.LinAlgError, InfeasibleStepError, FloatingPointError, PreconditionerMismatch) as err:
        print(f"flexgmres: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as err:
        print(f"flexgmres: {err}", file=sys.stderr)
        return EXIT_USAGE

    print(_summary(record))
    if ex.numerical_failure(record):
        print("flexgmres: breakdown without convergence", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())
