"""Report files: CSV tables, JSON documents and plain-text tree rules.

Floats are written with ``repr`` so every file re-parses to the exact values
that produced it, and column orders are fixed, so two runs with the same
inputs write byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from ..detector import export_tree
from ..monitor import write_bounds_csv, write_vectors_csv
from .bench import OverheadReport
from .pipeline import METRICS, PipelineResult

SUMMARY_COLUMNS = ("model",) + METRICS + ("N_ft/N_l",) + tuple(f"{m}_std" for m in METRICS) + \
    ("n_runs", "n_accepted")
RUN_COLUMNS = ("seed", "model", "alpha") + METRICS + ("N_ft", "N_l", "accepted")
TRACE_COLUMNS = ("seed", "round", "k", "features", "P", "R", "accepted")
LONG_COLUMNS = ("seed", "model", "metric", "value")
OVERHEAD_COLUMNS = ("variant", "mean_s", "std_s", "median_of_means_s", "ci95_low_s", "ci95_high_s",
                    "block_ci95_low_s", "block_ci95_high_s", "overhead", "repetitions", "batch_size", "n_images")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(path: str | Path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _parse(v: str):
    if v in ("true", "false"):
        return v == "true"
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


def read_rows(path: str | Path) -> list[dict]:
    """Rows of a report CSV with numbers and booleans converted back."""
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def write_json(path: str | Path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def trace_rows(result: PipelineResult) -> list[dict]:
    rows = []
    for run in result.runs:
        for t in run.reduced.trace:
            rows.append({"seed": run.seed, "round": t.round, "k": t.k,
                         "features": ";".join(map(str, t.features)), "P": t.precision, "R": t.recall,
                         "accepted": t.accepted})
    return rows


def long_rows(result: PipelineResult) -> list[dict]:
    return [{"seed": r["seed"], "model": r["model"], "metric": m, "value": r[m]}
            for r in result.metric_rows() for m in METRICS + ("N_ft", "N_l")]


def emit_report(result: PipelineResult | None, out_dir: str | Path,
                overhead: OverheadReport | None = None) -> list[Path]:
    """Write every report file into ``out_dir`` and return their paths.

    Raises:
        OSError: ``out_dir`` cannot be created or written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def path(name: str) -> Path:
        written.append(out / name)
        return out / name

    if result is not None:
        L = result.n_layers
        write_rows(path("metrics.csv"), result.summary_rows(), SUMMARY_COLUMNS)
        write_rows(path("metrics_runs.csv"), result.metric_rows(), RUN_COLUMNS)
        write_rows(path("metrics_long.csv"), long_rows(result), LONG_COLUMNS)
        write_rows(path("reduction_trace.csv"), trace_rows(result), TRACE_COLUMNS)
        first = result.runs[0]
        write_bounds_csv(path("bounds.csv"), first.bounds)
        write_json(path("split.json"), first.split.to_dict())
        for name, tree in (("tree", first.full), ("reduced_tree", first.reduced.tree)):
            text, doc = export_tree(tree, L)
            write_json(path(f"{name}.json"), doc)
            path(f"{name}_rules.txt").write_text(text)
        write_vectors_csv(path("vectors_train.csv"), first.train.image_ids, first.train.y, first.train.X)
        write_vectors_csv(path("vectors_test.csv"), first.test.image_ids, first.test.y, first.test.X)
        write_json(path("eval_report.json"), {
            str(run.seed): {"alpha": run.alpha, "full": run.full_report.to_dict(),
                            "reduced": run.reduced.report.to_dict(),
                            "reduced_features": list(run.reduced.features),
                            "reduced_accepted": run.reduced.accepted,
                            "retention": run.reduced.retention()}
            for run in result.runs})
        pool_doc = {"summary": result.pool_summary, "rounds": result.pool.rounds,
                    "eliminated": result.pool.eliminated,
                    "trace": [{"round": t.round, "k": t.k, "features": list(t.features), "P": t.precision,
                               "R": t.recall, "accepted": t.accepted} for t in result.pool.trace]}
        write_json(path("pool.json"), pool_doc)
    if overhead is not None:
        write_rows(path("overhead.csv"), overhead.rows(), OVERHEAD_COLUMNS)
        write_json(path("overhead_taps.json"), overhead.taps)
    return written
