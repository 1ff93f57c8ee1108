"""Command-line harness: run / grid / plot / selftest.

    conlearn run --config configs/ste.toml [--seed 3] [--out-dir runs]
    conlearn grid --config configs/ste_grid.toml [--workers 4] [--plots]
    conlearn plot --csv runs/grid.csv [--betas 0.3,1,3]
    conlearn selftest

The output directory resolves from --out-dir, then $CONLEARN_OUT_DIR, then
./runs.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import grid as gridmod
from . import plots
from .config import ConfigError, load_grid_spec, load_run_config, run_config_from_dict
from .selftest import run_selftest
from .training import run_experiment

ENV_OUT_DIR = "CONLEARN_OUT_DIR"


def _out_dir(args) -> str:
    path = args.out_dir or os.environ.get(ENV_OUT_DIR) or "runs"
    os.makedirs(path, exist_ok=True)
    return path


def _override_args(parser):
    parser.add_argument("--task", choices=("ste", "hierlabel", "bio", "pairrel"))
    parser.add_argument("--loss", dest="loss_type",
                        choices=("none", "soft", "binary", "real"))
    parser.add_argument("--strategy", choices=("top1", "sampling", "exhaustive"))
    parser.add_argument("--k", type=int)
    parser.add_argument("--mechanism",
                        choices=("none", "static", "monotone", "proj_sup", "proj_con", "proj_both"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lam2", type=float)


def _collect_overrides(args) -> dict:
    keys = ("task", "loss_type", "strategy", "k", "mechanism", "seed", "epochs", "lam2")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def cmd_run(args) -> int:
    if args.config:
        cfg = load_run_config(args.config, _collect_overrides(args))
    else:
        cfg = run_config_from_dict(_collect_overrides(args))
    result = run_experiment(cfg)
    print(f"task={cfg.task} loss={cfg.loss_type} strategy={cfg.strategy} k={cfg.k} "
          f"mechanism={cfg.mechanism} seed={cfg.seed} status={result.status}")
    print(f"main_metric={result.main_metric!r} violation_rate={result.violation_rate!r}")
    for beta, value in result.hbetas.items():
        print(f"hbeta[{beta:g}]={value!r}")
    print(f"lambda_final={result.lambda_final!r} steps={result.steps} "
          f"wall_seconds={result.wall_seconds:.2f}")
    if args.csv:
        rows = [gridmod.result_to_row(result)]
        gridmod.write_csv(rows, cfg.beta_grid, args.csv)
        print(f"wrote {args.csv}")
    return 0 if result.status == "ok" else 1


def cmd_grid(args) -> int:
    spec = load_grid_spec(args.config)
    out_dir = _out_dir(args)

    def progress(result):
        cfg = result.config
        print(f"done {cfg.task}/{cfg.loss_type}/{cfg.strategy}-k{cfg.k}/{cfg.mechanism} "
              f"seed={cfg.seed}: {result.status} metric={result.main_metric:.4f} "
              f"viol={result.violation_rate:.4f} ({result.wall_seconds:.1f}s)", flush=True)

    rows, results, any_failed = gridmod.run_grid(spec, workers=args.workers, progress=progress)
    beta_grid = results[0].config.beta_grid
    csv_path = os.path.join(out_dir, args.name + ".csv")
    gridmod.write_csv(rows, beta_grid, csv_path)
    print(f"wrote {csv_path} ({len(rows)} rows)")
    if args.plots:
        for path in plots.emit_plots(rows, beta_grid, out_dir):
            print(f"wrote {path}")
    return 1 if any_failed else 0


def cmd_plot(args) -> int:
    rows = gridmod.read_csv(args.csv)
    betas = [float(b) for b in args.betas.split(",")]
    written = plots.emit_plots(rows, betas, _out_dir(args))
    for path in written:
        print(f"wrote {path}")
    return 0 if written else 1


def cmd_selftest(_args) -> int:
    return run_selftest()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conlearn",
                                     description="constraint-injection training harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train one configuration")
    p_run.add_argument("--config", help="TOML file with a [run] table")
    _override_args(p_run)
    p_run.add_argument("--out-dir")
    p_run.add_argument("--csv", help="write a one-run CSV to this path")
    p_run.set_defaults(fn=cmd_run)

    p_grid = sub.add_parser("grid", help="run a (cell x seed) grid from a TOML spec")
    p_grid.add_argument("--config", required=True, help="TOML file with [base] and [grid]")
    p_grid.add_argument("--workers", type=int, default=1)
    p_grid.add_argument("--name", default="grid", help="basename of the output CSV")
    p_grid.add_argument("--plots", action="store_true", help="emit SVG charts too")
    p_grid.add_argument("--out-dir")
    p_grid.set_defaults(fn=cmd_grid)

    p_plot = sub.add_parser("plot", help="render H-beta bar charts from a grid CSV")
    p_plot.add_argument("--csv", required=True)
    p_plot.add_argument("--betas", default="0.3,1,3")
    p_plot.add_argument("--out-dir")
    p_plot.set_defaults(fn=cmd_plot)

    p_self = sub.add_parser("selftest", help="run the fast invariant suite")
    p_self.set_defaults(fn=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
