"""Command line entry point: ``quantmon <subcommand> [--config FILE] [--out DIR]``.

Stages communicate through files in the output directory (``--out``, else
the ``QUANTMON_OUT`` environment variable, else ``out_dir`` from the config):

    gen-data        data/{train,test}-{images,labels}.idx
    train-net       network.qsnt
    campaign        records.csv
    extract-bounds  split.json, bounds.csv
    train-detector  tree.json, tree_rules.txt, vectors_{train,test}.csv
    evaluate        eval_report.json
    reduce          reduced_tree.json, reduced_tree_rules.txt, reduction_trace.csv
    search-minimal  pool.json
    export-tree     <tree>_rules.txt
    bench           overhead.csv
    run             everything above, plus the reseeded summary tables
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ..detector import LabeledDataset, evaluate_modes, export_tree, fit_tree, import_tree
from ..errors import ConfigurationError, DueError, NetworkFormatError
from ..monitor import N_PERCENTILES, read_bounds_csv, read_vectors_csv, write_bounds_csv, write_vectors_csv
from ..reduction import minimal_feature_search, reduce_features, summarize_minimal
from . import experiment as ex
from .config import OUT_DIR_ENV, CampaignConfig, format_config, parse_config
from .pipeline import metric_values, select_alpha
from .report import OVERHEAD_COLUMNS, TRACE_COLUMNS, write_json, write_rows
from .split import Split, bounds_for_split, build_datasets, split_dataset

logger = logging.getLogger("quantmon")


def _config(args) -> CampaignConfig:
    overrides = {}
    for item in args.set or ():
        key, _, value = item.partition("=")
        overrides[key.strip()] = value
    text = Path(args.config).read_text() if args.config else ""
    text += "".join(f"\n{k} = {v}" for k, v in overrides.items())
    config = parse_config(text)
    if args.out:
        # The flag beats both the environment and the config file.
        os.environ[OUT_DIR_ENV] = args.out
    return config


def _out(config: CampaignConfig) -> Path:
    out = config.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _vectors(out: Path, name: str) -> LabeledDataset:
    ids, labels, X = read_vectors_csv(out / f"vectors_{name}.csv")
    return LabeledDataset(X, labels, ids)


def _n_layers(data: LabeledDataset) -> int:
    return data.n_features // N_PERCENTILES


def cmd_gen_data(config, args):
    ex.generate_data(config)
    print(f"wrote {ex.Paths.of(config).data}")


def cmd_train_net(config, args):
    net, acc = ex.train_network(config)
    print(f"test accuracy {acc:.4f}; {net.n_parameters()} parameters -> {ex.Paths.of(config).network}")


def cmd_campaign(config, args):
    table = ex.run_campaign_stage(config)
    print(f"{len(table)} records {table.outcome_counts()} -> {ex.Paths.of(config).records}")


def cmd_extract_bounds(config, args):
    out = _out(config)
    table = ex.get_records(config)
    split = split_dataset(table, config.split_ratio, args.seed if args.seed is not None else config.seed,
                          config.bounds_fraction)
    bounds = bounds_for_split(table, split)
    write_json(out / "split.json", split.to_dict())
    write_bounds_csv(out / "bounds.csv", bounds)
    print(f"{len(split.train_ids)} train / {len(split.test_ids)} test images; bounds from "
          f"{len(split.bounds_ids)} images -> {out / 'bounds.csv'}")


def cmd_train_detector(config, args):
    out = _out(config)
    table = ex.get_records(config)
    if not (out / "split.json").exists():
        cmd_extract_bounds(config, args)
    split = Split.from_dict(json.loads((out / "split.json").read_text()))
    bounds = read_bounds_csv(out / "bounds.csv")
    train, test = build_datasets(table, split, bounds, config.balance_ratio, split.seed)
    alpha = args.alpha if args.alpha is not None else \
        select_alpha(train, config.ccp_alphas, config.validation_fraction, split.seed)
    tree = fit_tree(train, ccp_alpha=alpha, seed=split.seed)
    text, doc = export_tree(tree, table.n_layers)
    write_json(out / "tree.json", doc)
    (out / "tree_rules.txt").write_text(text)
    write_vectors_csv(out / "vectors_train.csv", train.image_ids, train.y, train.X)
    write_vectors_csv(out / "vectors_test.csv", test.image_ids, test.y, test.X)
    print(f"alpha {alpha:g}: {tree.node_count} nodes, depth {tree.depth()} -> {out / 'tree.json'}")


def cmd_evaluate(config, args):
    out = _out(config)
    tree = import_tree((out / args.tree).read_text())
    test = _vectors(out, "test")
    report = evaluate_modes(tree.predict(test.X), test.y)
    write_json(out / "eval_report.json", report.to_dict())
    for k, v in metric_values(report).items():
        print(f"{k} {v:.4f}")


def cmd_reduce(config, args):
    out = _out(config)
    full = import_tree((out / "tree.json").read_text())
    train, test = _vectors(out, "train"), _vectors(out, "test")
    reduced = reduce_features(full, train, test, config.retention, config.retention_mode,
                              max_k=config.reduction_max_k or None)
    text, doc = export_tree(reduced.tree, _n_layers(train))
    write_json(out / "reduced_tree.json", doc)
    (out / "reduced_tree_rules.txt").write_text(text)
    write_rows(out / "reduction_trace.csv",
               [{"seed": full.seed, "round": t.round, "k": t.k, "features": ";".join(map(str, t.features)),
                 "P": t.precision, "R": t.recall, "accepted": t.accepted} for t in reduced.trace],
               TRACE_COLUMNS)
    status = "accepted" if reduced.accepted else "NOT accepted (best found)"
    print(f"{reduced.n_features} features from {reduced.n_layers(_n_layers(train))} layers {status}: "
          f"{list(reduced.features)}")


def cmd_search_minimal(config, args):
    out = _out(config)
    full = import_tree((out / "tree.json").read_text())
    train, test = _vectors(out, "train"), _vectors(out, "test")
    pool = minimal_feature_search(train, test, config.retention, config.search_depth, config.search_depth_unit,
                                  config.retention_mode, full.ccp_alpha, full.seed,
                                  max_k=config.search_max_k or None)
    summary = summarize_minimal(pool, _n_layers(train)) if pool.candidates else None
    write_json(out / "pool.json", {"summary": summary, "rounds": pool.rounds, "eliminated": pool.eliminated,
                                   "trace": [{"round": t.round, "k": t.k, "features": list(t.features),
                                              "P": t.precision, "R": t.recall, "accepted": t.accepted}
                                             for t in pool.trace]})
    print(f"{len(pool.candidates)} candidates in {pool.rounds} rounds: {pool.feature_sets}")


def cmd_export_tree(config, args):
    out = _out(config)
    path = out / args.tree
    tree = import_tree(path.read_text())
    n_layers = tree.n_features // N_PERCENTILES
    text, _ = export_tree(tree, n_layers)
    target = Path(args.output) if args.output else path.with_name(path.stem + "_rules.txt")
    target.write_text(text)
    print(f"-> {target}")


def cmd_bench(config, args):
    out = _out(config)
    if args.features:
        features = [int(f) for f in args.features.split(",")]
    else:
        features = json.loads((out / "reduced_tree.json").read_text())["features"]
    report = ex.run_bench(config, features, args.repetitions, args.warmup, args.batch_size)
    write_rows(out / "overhead.csv", report.rows(), OVERHEAD_COLUMNS)
    for row in report.rows():
        print(f"{row['variant']:8s} {row['mean_s'] * 1e3:.4f} ms/image  overhead {row['overhead'] * 100:+.2f}%")


def cmd_run(config, args):
    result, overhead, written = ex.run_experiment(config, bench=args.bench, bench_repetitions=args.repetitions)
    (config.output_dir() / "config.txt").write_text(format_config(config))
    for row in result.summary_rows():
        print(row["model"], " ".join(f"{m}={row[m]:.3f}" for m in ("P_cls", "P_cat", "P_sdc", "R_cls", "R_cat",
                                                                       "R_sdc")), row["N_ft/N_l"])
    print(f"{len(written)} report files in {config.output_dir()}")


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the synthetic shapes dataset"),
    "train-net": (cmd_train_net, "train the desk CNN"),
    "extract-bounds": (cmd_extract_bounds, "split images and extract fault-free bounds"),
    "campaign": (cmd_campaign, "run the fault-injection campaign"),
    "train-detector": (cmd_train_detector, "fit the full decision-tree detector"),
    "reduce": (cmd_reduce, "guided feature reduction"),
    "search-minimal": (cmd_search_minimal, "minimal feature-set search"),
    "evaluate": (cmd_evaluate, "precision/recall in all modes"),
    "bench": (cmd_bench, "inference overhead benchmark"),
    "export-tree": (cmd_export_tree, "write a tree's rules as text"),
    "run": (cmd_run, "the whole experiment"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quantmon", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", help=f"output directory (overrides ${OUT_DIR_ENV} and the config)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
        if name == "extract-bounds":
            p.add_argument("--seed", type=int, help="split seed (default: config seed)")
        if name == "train-detector":
            p.add_argument("--seed", type=int, help="split seed when no split.json exists")
            p.add_argument("--alpha", type=float, help="fixed pruning alpha (default: validation sweep)")
        if name in ("evaluate", "export-tree"):
            p.add_argument("--tree", default="tree.json", help="tree document inside the output directory")
        if name == "export-tree":
            p.add_argument("--output", help="rules file (default: next to the tree)")
        if name in ("bench", "run"):
            p.add_argument("--repetitions", type=int, default=100)
        if name == "bench":
            p.add_argument("--features", help="comma-separated reduced feature indices")
            p.add_argument("--warmup", type=int, default=2)
            p.add_argument("--batch-size", type=int, default=10)
        if name == "run":
            p.add_argument("--bench", action="store_true", help="also run the overhead benchmark")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config(args)
        COMMANDS[args.command][0](config, args)
    except (ConfigurationError, DueError, NetworkFormatError, FileNotFoundError) as exc:
        print(f"quantmon {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
