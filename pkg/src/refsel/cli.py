"""Command-line entry points: run experiment grids, export figure tables.

Exit codes: 0 on success, 2 for configuration problems, 3 for missing or
unreadable data. Argument errors reported by the parser itself also exit
with 2, so scripted callers only need the three values.
"""

from __future__ import annotations

import argparse
import json
import logging
import pathlib
import sys

from .bench import (
    FIGURES,
    TARGET_COLUMN,
    emit_plotdata,
    load_records,
    run_experiment,
    validate_config,
)
from .datagen import load_csv
from .errors import ConfigError, DataError

_CONFIG_HELP = """\
configuration file keys (YAML, all optional unless marked):

  preset        experiment family (required): bodyfat1, bodyfat2, bodyfat3,
                sim1, sim2, or custom
  replications  repetitions per scenario (default 100)
  scale         fraction of replications actually run, in (0, 1] (default 1.0)
  seed          master seed; each cell derives independent streams (default 0)
  out           output directory (default runs/<preset>)
  jobs          parallel worker processes (default 1)
  methods       selectors to compare; append +ref for the variant that
                replaces the target with reference-model predictions
                (bases: projpred, steplm, bayes, lasso, locfdr, ebmed, ci90,
                iter_projpred, iter_lasso)
  alpha         size-rule tail threshold (default 0.16)
  kfold         cross-validation folds (default 10)
  n_grid        sample sizes per scenario (subsample sizes for bodyfat3)
  rho_grid      latent correlation levels in [0, 1) (simulated presets)
  p             total predictors for simulated data
  k             relevant predictors for simulated data
  data          CSV path for the body-measurement presets
                (default data/bodyfat_synthetic.csv)
  total_p       column count after noise augmentation (default 100)
  max_iters     pass cap for the iterative selectors (default 20)
  mcmc          nested mapping with warmup, draws, keep
                (defaults 500 / 300 / 200)

command-line flags override the corresponding file keys.
exit codes: 0 success, 2 configuration error, 3 data error.
"""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refsel",
        description="Variable-selection experiment runner and figure exporter.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser(
        "run",
        help="execute an experiment grid described by a config file",
        epilog=_CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    run_p.add_argument("--config", required=True, help="path to the YAML config file")
    run_p.add_argument("--preset", help="override the config's preset")
    run_p.add_argument("--scale", type=float, help="override the replication scale")
    run_p.add_argument("--out", help="override the output directory")
    run_p.add_argument("--seed", type=int, help="override the master seed")
    run_p.add_argument("--jobs", type=int, help="override the worker count")

    plot_p = sub.add_parser(
        "plotdata",
        help="export one figure's tidy CSV from a finished run directory",
    )
    plot_p.add_argument(
        "--figure", required=True, help=f"figure id: {', '.join(FIGURES)}"
    )
    plot_p.add_argument(
        "--in", dest="in_dir", required=True, help="run directory holding records.jsonl"
    )
    plot_p.add_argument(
        "--out", help="directory for the CSV (default: the run directory)"
    )
    return parser


def _cmd_run(args) -> int:
    overrides = {
        "preset": args.preset,
        "scale": args.scale,
        "out": args.out,
        "seed": args.seed,
        "jobs": args.jobs,
    }
    cfg = validate_config(args.config, overrides=overrides)
    for line in cfg.describe():
        print(line)
    records = run_experiment(cfg)
    n_failed = sum(1 for r in records if r.error is not None)
    tail = f" ({n_failed} failed)" if n_failed else ""
    print(f"wrote {len(records)} records to {cfg.out_dir}{tail}")
    return 0


def _run_directory_column_names(in_dir: pathlib.Path):
    cfg_path = in_dir / "config.json"
    if not cfg_path.exists():
        return None
    try:
        meta = json.loads(cfg_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return None
    if not str(meta.get("preset", "")).startswith("bodyfat"):
        return None
    try:
        return load_csv(meta["data"], target=TARGET_COLUMN).column_names
    except (KeyError, DataError, OSError):
        return None


def _cmd_plotdata(args) -> int:
    in_dir = pathlib.Path(args.in_dir)
    records = load_records(in_dir / "records.jsonl")
    out_dir = pathlib.Path(args.out) if args.out else in_dir
    path = emit_plotdata(
        records, args.figure, out_dir, column_names=_run_directory_column_names(in_dir)
    )
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("refsel").setLevel(logging.INFO)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_plotdata(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
