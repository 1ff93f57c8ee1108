"""Grid execution, CSV schema, and per-cell aggregation.

One CSV per grid: a header, one row per (cell, seed) run, and one aggregate
row per cell (seed column "AGG") holding means, with population standard
deviations in the dedicated *_std columns (empty on per-seed rows). Every
value except wall_seconds is a pure function of (config, seed), so two
executions of the same grid produce byte-identical files apart from that
column.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor

from . import metrics as mt
from .config import GridSpec, RunConfig, expand_grid
from .training import RunResult, run_experiment

CELL_KEYS = ("task", "loss_type", "strategy", "k", "mechanism", "logic")
_BASE_FIELDS = ("main_metric", "violation_rate")


def hbeta_column(beta: float) -> str:
    return f"hbeta_{beta:g}"


def csv_columns(beta_grid) -> list[str]:
    cols = list(CELL_KEYS) + ["seed"]
    cols += list(_BASE_FIELDS)
    cols += [hbeta_column(b) for b in beta_grid]
    cols += ["lambda_final", "steps", "wall_seconds", "status"]
    cols += [f"{f}_std" for f in _BASE_FIELDS]
    cols += [f"{hbeta_column(b)}_std" for b in beta_grid]
    return cols


def result_to_row(result: RunResult) -> dict:
    cfg = result.config
    row = {key: getattr(cfg, key) for key in CELL_KEYS}
    row["seed"] = cfg.seed
    row["main_metric"] = result.main_metric
    row["violation_rate"] = result.violation_rate
    for beta, value in result.hbetas.items():
        row[hbeta_column(beta)] = value
    row["lambda_final"] = result.lambda_final
    row["steps"] = result.steps
    row["wall_seconds"] = result.wall_seconds
    row["status"] = result.status
    return row


def cell_of(row: dict) -> tuple:
    return tuple(row[k] for k in CELL_KEYS)


def aggregate_rows(cell_rows: list[dict], beta_grid) -> dict:
    """Mean/std over the ok runs of one cell; seed column becomes AGG."""
    agg = {key: cell_rows[0][key] for key in CELL_KEYS}
    agg["seed"] = "AGG"
    ok = [r for r in cell_rows if r["status"] == "ok"]
    fields = list(_BASE_FIELDS) + [hbeta_column(b) for b in beta_grid] + ["lambda_final"]
    if ok:
        for f in fields:
            mu, sd = mt.mean_std([float(r[f]) for r in ok])
            agg[f] = mu
            if f != "lambda_final":
                agg[f + "_std"] = sd
        agg["steps"] = ok[0]["steps"]
        agg["status"] = "ok" if len(ok) == len(cell_rows) else f"ok:{len(ok)}/{len(cell_rows)}"
    else:
        agg["status"] = "failed"
    agg["wall_seconds"] = sum(float(r["wall_seconds"]) for r in cell_rows)
    return agg


def run_grid(spec: GridSpec, workers: int = 1,
             progress=None) -> tuple[list[dict], list[RunResult], bool]:
    """Execute every (cell, seed) run; returns (csv rows, results, any_failed).

    Cells are independent; with workers > 1 they run in separate processes
    and the rows come back in deterministic grid order regardless.
    """
    cfgs = expand_grid(spec)
    if not cfgs:
        raise ValueError("grid expanded to zero runs")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_experiment, cfgs))
    else:
        results = []
        for cfg in cfgs:
            results.append(run_experiment(cfg))
            if progress:
                progress(results[-1])
    beta_grid = cfgs[0].beta_grid
    rows_by_cell: dict[tuple, list[dict]] = {}
    order: list[tuple] = []
    for result in results:
        row = result_to_row(result)
        key = cell_of(row)
        if key not in rows_by_cell:
            rows_by_cell[key] = []
            order.append(key)
        rows_by_cell[key].append(row)
    rows = []
    for key in order:
        rows.extend(rows_by_cell[key])
        rows.append(aggregate_rows(rows_by_cell[key], beta_grid))
    any_failed = any(r.status != "ok" for r in results)
    return rows, results, any_failed


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def rows_to_csv(rows: list[dict], beta_grid) -> str:
    columns = csv_columns(beta_grid)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format(row.get(col)) for col in columns])
    return buf.getvalue()


def write_csv(rows: list[dict], beta_grid, path):
    with open(path, "w") as fh:
        fh.write(rows_to_csv(rows, beta_grid))


def read_csv(path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))
