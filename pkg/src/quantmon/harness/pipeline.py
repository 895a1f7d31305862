"""Detector training, evaluation and reduction over reseeded splits."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..detector import DecisionTree, EvalReport, LabeledDataset, ccp_prune, evaluate_modes, fit_tree, grow_tree
from ..errors import ConfigurationError
from ..monitor import N_PERCENTILES, QuantileBounds
from ..reduction import CandidatePool, ReducedModel, minimal_feature_search, reduce_features, summarize_minimal
from .campaign import RecordTable
from .config import CampaignConfig
from .split import Split, _systematic, bounds_for_split, build_datasets, split_dataset

logger = logging.getLogger(__name__)

METRICS = ("P_cls", "P_cat", "P_sdc", "R_cls", "R_cat", "R_sdc")


def metric_values(report: EvalReport) -> dict[str, float]:
    return {f"{pr}_{m}": float(getattr(report, name)[m])
            for pr, name in (("P", "precision"), ("R", "recall")) for m in ("cls", "cat", "sdc")}


def select_alpha(train: LabeledDataset, alphas, validation_fraction: float, seed: int) -> float:
    """Pruning strength with the best mean class-wise P and R on held-out train images.

    Ties go to the larger alpha (the smaller tree).
    """
    alphas = sorted(float(a) for a in alphas)
    if len(alphas) == 1:
        return alphas[0]
    ids = np.unique(train.image_ids)
    order = np.random.default_rng(seed).permutation(ids)
    ratio = (1.0 - validation_fraction) / validation_fraction
    val_ids = order[_systematic(len(order), ratio)]
    val = np.isin(train.image_ids, val_ids)
    sub, held = train.subset(~val), train.subset(val)
    if len(set(sub.y.tolist())) < 2 or len(held) == 0:
        return alphas[len(alphas) // 2]
    grown = grow_tree(sub, seed=seed)
    best, best_score = alphas[0], -1.0
    for a in alphas:
        r = evaluate_modes(ccp_prune(grown, a).predict(held.X), held.y)
        score = 0.5 * (r.precision["cls"] + r.recall["cls"])
        if score >= best_score:
            best, best_score = a, score
    return best


@dataclass
class SeedRun:
    seed: int
    split: Split
    bounds: QuantileBounds
    alpha: float
    train: LabeledDataset
    test: LabeledDataset
    full: DecisionTree
    full_report: EvalReport
    reduced: ReducedModel


@dataclass
class PipelineResult:
    config: CampaignConfig
    n_layers: int
    runs: list[SeedRun]
    pool: CandidatePool
    pool_summary: dict | None

    def metric_rows(self) -> list[dict]:
        """Per-seed metric rows for the full and reduced models."""
        rows = []
        for run in self.runs:
            n_all = run.train.n_features
            rows.append({"seed": run.seed, "model": "full", "alpha": run.alpha,
                         **metric_values(run.full_report), "N_ft": n_all, "N_l": n_all // N_PERCENTILES,
                         "accepted": True})
            red = run.reduced
            rows.append({"seed": run.seed, "model": "red", "alpha": run.alpha,
                         **metric_values(red.report), "N_ft": red.n_features, "N_l": red.n_layers(self.n_layers),
                         "accepted": red.accepted})
        return rows

    def summary_rows(self) -> list[dict]:
        """Mean and standard deviation over seeds, one row per model."""
        rows = self.metric_rows()
        out = []
        for model in ("full", "red"):
            sel = [r for r in rows if r["model"] == model]
            row = {"model": model}
            for m in METRICS:
                row[m] = float(np.mean([r[m] for r in sel]))
            row["N_ft/N_l"] = f"{np.mean([r['N_ft'] for r in sel]):.1f}/{np.mean([r['N_l'] for r in sel]):.1f}"
            for m in METRICS:
                row[f"{m}_std"] = float(np.std([r[m] for r in sel]))
            row["n_runs"] = len(sel)
            row["n_accepted"] = sum(bool(r["accepted"]) for r in sel)
            out.append(row)
        return out


def run_seed(table: RecordTable, config: CampaignConfig, seed: int) -> SeedRun:
    split = split_dataset(table, config.split_ratio, seed, config.bounds_fraction)
    bounds = bounds_for_split(table, split)
    train, test = build_datasets(table, split, bounds, config.balance_ratio, seed)
    alpha = select_alpha(train, config.ccp_alphas, config.validation_fraction, seed)
    full = fit_tree(train, ccp_alpha=alpha, seed=seed)
    report = evaluate_modes(full.predict(test.X), test.y)
    reduced = reduce_features(full, train, test, config.retention, config.retention_mode,
                              max_k=config.reduction_max_k or None)
    logger.info("seed %d: alpha=%g full P_sdc=%.3f R_sdc=%.3f, reduced k=%d accepted=%s",
                seed, alpha, report.precision["sdc"], report.recall["sdc"], reduced.n_features, reduced.accepted)
    return SeedRun(seed, split, bounds, alpha, train, test, full, report, reduced)


def train_eval_pipeline(table: RecordTable, config: CampaignConfig, search: bool = True) -> PipelineResult:
    """Full and reduced detectors over ``config.n_reseeds`` reseeded splits,
    plus a minimal-feature search on the first split.

    Raises:
        ConfigurationError: The training data holds a single class.
    """
    if config.n_reseeds < 1:
        raise ConfigurationError("n_reseeds must be >= 1")
    runs = [run_seed(table, config, config.seed + s) for s in range(config.n_reseeds)]
    pool, summary = CandidatePool(), None
    if search:
        first = runs[0]
        pool = minimal_feature_search(first.train, first.test, config.retention, config.search_depth,
                                      config.search_depth_unit, config.retention_mode, first.alpha,
                                      first.seed, max_k=config.search_max_k or None)
        if pool.candidates:
            summary = summarize_minimal(pool, table.n_layers)
    return PipelineResult(config, table.n_layers, runs, pool, summary)
