"""Command-line entry point.

Subcommands:
- setting-one, setting-one-deflation, setting-two, setting-three, real-data:
  run the experiment described by --config (defaults to the bundled desk-scale config;
  real-data picks the bundled QMP or scRNA config with --dataset)
- run:       run any experiment config
- fit:       fit one model to a count table and print a JSON summary
- simulate:  fit one model and write simulated rows as CSV
- distance:  Wasserstein distance between two count tables
- report:    re-emit a results directory as CSV or JSON

Flags --seed, --out and --threads override the matching config keys.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from app import __version__
from app.config import MODEL_TAGS, load_config
from app.models.params import FitOptions
from app.services.experiment_runner import run_experiment
from app.services.model_engines import build_engine, describe_engine
from app.utils.data_loader import load_counts_csv
from app.utils.errors import ConfigValidationError, ZeroCountError
from app.utils.metrics import GoodnessOfFitMetrics
from app.utils.reporting import emit_report, load_report

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
EXPERIMENT_COMMANDS = {
    "setting-one": "setting_one.toml",
    "setting-one-deflation": "setting_one_deflation.toml",
    "setting-two": "setting_two.toml",
    "setting-three": "setting_three.toml",
}
REAL_DATA_CONFIGS = {"qmp": "real_data_qmp.toml", "scrna": "real_data_scrna.toml"}
UNCONDITIONAL_MODELS = [tag for tag in MODEL_TAGS if tag != "hnb_cov"]


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _add_run_flags(parser: argparse.ArgumentParser, default_config: Optional[str],
                   required: bool = False) -> None:
    parser.add_argument("--config", default=default_config, required=required,
                        help="experiment TOML file")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--threads", type=int, default=None, help="override n_jobs")
    parser.add_argument("--force", action="store_true", help="rerun even if results exist")
    parser.add_argument("--allow-partial", action="store_true",
                        help="exit 0 even when some cells failed")


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True, help="CSV count table (header row)")
    parser.add_argument("--model", choices=UNCONDITIONAL_MODELS, default="tlnpn")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--bridge-tol", type=float, default=1e-6)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zicount", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for command, filename in EXPERIMENT_COMMANDS.items():
        _add_run_flags(sub.add_parser(command, help=f"run {filename}"), str(CONFIG_DIR / filename))
    real_data = sub.add_parser("real-data", help="run the bundled real-data config for --dataset")
    _add_run_flags(real_data, None)
    real_data.add_argument("--dataset", choices=sorted(REAL_DATA_CONFIGS), default="qmp",
                           help="bundled dataset config, ignored when --config is given")
    _add_run_flags(sub.add_parser("run", help="run an experiment config"), None, required=True)

    fit = sub.add_parser("fit", help="fit a model and print its parameters as JSON")
    _add_model_flags(fit)

    simulate = sub.add_parser("simulate", help="fit a model and write simulated rows")
    _add_model_flags(simulate)
    simulate.add_argument("--n", type=int, required=True, help="rows to simulate")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--out", default=None, help="output CSV (stdout when omitted)")

    distance = sub.add_parser("distance", help="Wasserstein distance between two count tables")
    distance.add_argument("x")
    distance.add_argument("y")
    distance.add_argument("--order", type=int, choices=(1, 2), default=2)
    distance.add_argument("--marginal", action="store_true", help="also print per-variable distances")

    report = sub.add_parser("report", help="re-emit a results directory")
    report.add_argument("results", help="results directory written by an experiment")
    report.add_argument("--format", choices=("csv", "json"), default="json")
    report.add_argument("--out", default=None, help="target directory (defaults to the results directory)")
    return parser


def config_path(args: argparse.Namespace) -> str:
    if args.config:
        return args.config
    if args.command == "real-data":
        return str(CONFIG_DIR / REAL_DATA_CONFIGS[args.dataset])
    raise ConfigValidationError(f"{args.command} needs --config")


def _cmd_experiment(args: argparse.Namespace) -> int:
    overrides = {"master_seed": args.seed, "output": args.out, "n_jobs": args.threads}
    config = load_config(config_path(args), overrides)
    summary = run_experiment(config, force=args.force)
    print(summary.results_dir)
    if summary.skipped_cells:
        logger.warning("%d infeasible cell(s) skipped", len(summary.skipped_cells))
    if summary.failed_cells and not args.allow_partial:
        print(f"{len(summary.failed_cells)} failed cell(s); see {summary.results_dir / 'manifest.json'}",
              file=sys.stderr)
        return 1
    return 0


def _fit_engine(args: argparse.Namespace):
    data = load_counts_csv(args.data)
    engine = build_engine(args.model, FitOptions(), n_jobs=args.threads, tol=args.bridge_tol)
    return data, engine.fit(data.values)


def _cmd_fit(args: argparse.Namespace) -> int:
    data, engine = _fit_engine(args)
    print(json.dumps(describe_engine(engine, list(data.variable_names)), indent=2))
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    data, engine = _fit_engine(args)
    simulated = pd.DataFrame(engine.simulate(args.n, seed=args.seed), columns=list(data.variable_names))
    if args.out:
        simulated.to_csv(args.out, index=False)
    else:
        simulated.to_csv(sys.stdout, index=False)
    return 0


def _cmd_distance(args: argparse.Namespace) -> int:
    x, y = load_counts_csv(args.x), load_counts_csv(args.y)
    result = {"order": args.order,
              "distance": GoodnessOfFitMetrics.wasserstein_pd(x.values, y.values, args.order)}
    if args.marginal:
        marginal = GoodnessOfFitMetrics.marginal_distances(x.values, y.values, args.order)
        result["marginal"] = dict(zip(x.variable_names, np.round(marginal, 12).tolist()))
    print(json.dumps(result, indent=2))
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    results = load_report(args.results)
    for path in emit_report(results, args.out or args.results, args.format):
        print(path)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    handlers = {"fit": _cmd_fit, "simulate": _cmd_simulate, "distance": _cmd_distance,
                "report": _cmd_report}
    handler = handlers.get(args.command, _cmd_experiment)
    try:
        return handler(args)
    except ZeroCountError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
