import argparse
import logging
import os
import sys
from dataclasses import replace

import pandas as pd

from core.exceptions import InfeasiblePrecoderError, RankDeficientError, ScenarioError, UndefinedRatioError
from data.load import load_scenario
from data.scenario import validate
from evaluation.runner import CONVENTIONAL_USERS, MOMENT_FORMS, SANDWICH_FORMS, run_scenario
from evaluation.sweep import PLOT_COLUMNS, emit_plotdata, load_sweep, run_sweep
from models.precoding import Method
from utils.utils import display_diagnostics

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s"
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INFEASIBLE = 2
EXIT_IO = 3


def parse_methods(value: str):
    try:
        return tuple(Method(m.strip()) for m in value.split(",") if m.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def non_negative_int(value: str) -> int:
    number = int(value)
    if number < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return number


def positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def _override(scenario, args):
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    return replace(scenario, **changes) if changes else scenario


def _check(scenario):
    diagnostics = validate(scenario)
    for d in diagnostics:
        log = logging.error if d.level == "error" else logging.warning
        log(f"[{d.code}] {d.message}")
    if any(d.level == "error" for d in diagnostics):
        raise ScenarioError("scenario failed validation")
    return diagnostics


def cmd_run(args) -> int:
    scenario = _override(load_scenario(args.scenario), args)
    _check(scenario)
    methods = args.methods or tuple(Method)
    outputs = ["MC"] + (["ClosedForm"] if args.closed_form else [])
    out_dir = args.out or os.path.join("results", os.path.splitext(os.path.basename(args.scenario))[0])
    run_scenario(scenario, methods, outputs, scenario.trials, args.conventional_users, args.jobs, out_dir,
                 moment=args.moment or "lemma", sandwich=args.sandwich or "printed")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_sweep(args.sweep)
    base = _override(spec.base, args)
    spec = replace(spec, base=base, methods=args.methods or spec.methods,
                   moment=args.moment or spec.moment, sandwich=args.sandwich or spec.sandwich)
    _check(base)
    run_sweep(spec, args.out or "results", jobs=args.jobs)
    return EXIT_OK


def cmd_plotdata(args) -> int:
    emit_plotdata(args.csv, args.out, args.column)
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    diagnostics = validate(scenario)
    display_diagnostics(pd.DataFrame(diagnostics, columns=["level", "code", "message"]), "Diagnostics")
    return EXIT_VALIDATION if any(d.level == "error" for d in diagnostics) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Mixed-CSI massive MIMO downlink precoding simulator")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=non_negative_int, default=None, help="Override the scenario seed")
        p.add_argument("--trials", type=positive_int, default=None, help="Override the Monte Carlo trial count")
        p.add_argument("--out", type=str, default=None, help="Output directory")
        p.add_argument("--methods", type=parse_methods, default=None,
                       help="Comma-separated subset of ZF,MRT,SBM,eZF,eMRT")
        p.add_argument("--jobs", type=positive_int, default=1, help="Maximum parallel workers")
        p.add_argument("--moment", choices=MOMENT_FORMS, default=None,
                       help="Second-moment form of the closed forms (default lemma)")
        p.add_argument("--sandwich", choices=SANDWICH_FORMS, default=None,
                       help="Type-C interference term of the closed forms (default printed)")

    p_run = sub.add_parser("run", help="Evaluate a single scenario")
    p_run.add_argument("scenario", type=str, help="Path to scenario file")
    p_run.add_argument("--closed-form", action="store_true", help="Also report SBM closed-form rates")
    p_run.add_argument("--conventional-users", choices=CONVENTIONAL_USERS, default="all",
                       help="Users served by the ZF/MRT baselines")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="Run a parameter sweep")
    p_sweep.add_argument("sweep", type=str, help="Path to sweep file")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_plot = sub.add_parser("plotdata", help="Split a sweep CSV into per-curve data files")
    p_plot.add_argument("csv", type=str, help="Path to sweep CSV")
    p_plot.add_argument("--out", type=str, default=None, help="Output directory")
    p_plot.add_argument("--column", choices=PLOT_COLUMNS, default="mean_rate", help="y column")
    p_plot.set_defaults(func=cmd_plotdata)

    p_val = sub.add_parser("validate", help="Check a scenario file")
    p_val.add_argument("scenario", type=str, help="Path to scenario file")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        return args.func(args)
    except ScenarioError as e:
        logging.error(f"Invalid input: {e}")
        return EXIT_VALIDATION
    except (InfeasiblePrecoderError, RankDeficientError, UndefinedRatioError) as e:
        logging.error(f"Numerically infeasible: {e}")
        return EXIT_INFEASIBLE
    except OSError as e:
        logging.error(f"I/O error: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
