"""Guided feature reduction and minimal-feature search.

A full detector's features are ranked by Gini importance; detectors are then
retrained on the top-1, top-2, ... features until one keeps a required share
(default 95%) of the full model's precision and recall on held-out data.
The minimal search repeats this while eliminating every feature already
accepted, collecting a pool of disjoint minimal feature sets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detector import DecisionTree, EvalReport, LabeledDataset, evaluate_modes, fit_tree, gini_importances
from .errors import ConfigurationError
from .monitor import feature_location

logger = logging.getLogger(__name__)


@dataclass
class TraceRow:
    round: int
    k: int
    features: tuple[int, ...]
    precision: float
    recall: float
    accepted: bool


@dataclass
class ReducedModel:
    features: tuple[int, ...]  # in importance order
    tree: DecisionTree
    report: EvalReport
    full_report: EvalReport
    accepted: bool
    mode: str = "cls"
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.features)

    def n_layers(self, total_layers: int) -> int:
        return len({feature_location(f, total_layers)[0] for f in self.features})

    def layers(self, total_layers: int) -> tuple[int, ...]:
        return tuple(sorted({feature_location(f, total_layers)[0] for f in self.features}))

    def retention(self) -> dict[str, float]:
        m = self.mode
        fp, fr = self.full_report.precision[m], self.full_report.recall[m]
        return {"precision": self.report.precision[m] / fp if fp else float("nan"),
                "recall": self.report.recall[m] / fr if fr else float("nan")}


def rank_features(tree: DecisionTree, candidates: Sequence[int] | None = None) -> list[int]:
    """Features by descending Gini importance; ties by lower index."""
    imp = gini_importances(tree)
    pool = range(tree.n_features) if candidates is None else candidates
    return sorted(pool, key=lambda f: (-imp[f], f))


def evaluate_tree(tree: DecisionTree, data: LabeledDataset) -> EvalReport:
    return evaluate_modes(tree.predict(data.X), data.y)


def reduce_features(
    full: DecisionTree,
    train: LabeledDataset,
    test: LabeledDataset,
    retention: float = 0.95,
    mode: str = "cls",
    reference: EvalReport | None = None,
    candidates: Sequence[int] | None = None,
    max_k: int | None = None,
    round_index: int = 0,
) -> ReducedModel:
    """Smallest top-k importance subset keeping ``retention`` of precision and recall.

    Args:
        full: Fitted full model; its alpha and seed are reused for retraining.
        train, test: Training data and the held-out evaluation split.
        retention: Required share of the reference precision and recall.
        mode: Detection mode the retention is measured in (cls/cat/sdc).
        reference: Metrics to retain (defaults to ``full`` evaluated on ``test``).
        candidates: Features eligible for ranking (defaults to all).
        max_k: Largest subset tried (defaults to all candidates).

    Returns:
        The accepted model, or the best one found with ``accepted=False``.
    """
    if not 0.0 <= retention <= 1.0:
        raise ConfigurationError(f"retention must be in [0, 1], got {retention}")
    full_report = evaluate_tree(full, test)
    reference = reference or full_report
    p_need = retention * reference.precision[mode]
    r_need = retention * reference.recall[mode]
    ranking = rank_features(full, candidates if candidates is not None else full.features)
    if max_k is not None:
        ranking = ranking[:max_k]
    trace, best = [], None
    for k in range(1, len(ranking) + 1):
        subset = tuple(ranking[:k])
        tree = fit_tree(train, ccp_alpha=full.ccp_alpha, seed=full.seed, features=subset)
        report = evaluate_tree(tree, test)
        p, r = report.precision[mode], report.recall[mode]
        ok = p >= p_need and r >= r_need
        trace.append(TraceRow(round_index, k, subset, p, r, ok))
        logger.debug("round %d k=%d P=%.4f R=%.4f accepted=%s", round_index, k, p, r, ok)
        candidate = ReducedModel(subset, tree, report, reference, ok, mode)
        if ok:
            candidate.trace = trace
            return candidate
        if best is None or min(p / max(p_need, 1e-300), r / max(r_need, 1e-300)) > \
                min(best.report.precision[mode] / max(p_need, 1e-300),
                    best.report.recall[mode] / max(r_need, 1e-300)):
            best = candidate
    if best is None:
        raise ConfigurationError("no candidate features to reduce")
    best.trace = trace
    return best


@dataclass
class CandidatePool:
    candidates: list[ReducedModel] = field(default_factory=list)
    rounds: int = 0
    eliminated: int = 0
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def feature_sets(self) -> list[tuple[int, ...]]:
        return [c.features for c in self.candidates]


def minimal_feature_search(
    train: LabeledDataset,
    test: LabeledDataset,
    retention: float = 0.95,
    depth: int = 24,
    depth_unit: str = "rounds",
    mode: str = "cls",
    ccp_alpha: float = 1.5e-5,
    seed: int = 0,
    max_k: int | None = None,
) -> CandidatePool:
    """Collect disjoint minimal feature sets.

    Each round fits a full model on the features not yet in the pool, reduces
    it against the metrics of the original all-feature model, and adds the
    accepted subset. The search stops after ``depth`` rounds (or once
    ``depth`` features are eliminated, with ``depth_unit="features"``), or as
    soon as a reduction fails.
    """
    if depth_unit not in ("rounds", "features"):
        raise ConfigurationError(f"depth_unit must be 'rounds' or 'features', got {depth_unit!r}")
    pool = CandidatePool()
    original = fit_tree(train, ccp_alpha=ccp_alpha, seed=seed)
    reference = evaluate_tree(original, test)
    remaining = list(range(train.n_features))
    while remaining:
        budget_used = pool.rounds if depth_unit == "rounds" else pool.eliminated
        if budget_used >= depth:
            break
        full = original if pool.rounds == 0 else fit_tree(train, ccp_alpha, seed, features=remaining)
        reduced = reduce_features(full, train, test, retention, mode, reference=reference,
                                  candidates=remaining, max_k=max_k, round_index=pool.rounds)
        pool.rounds += 1
        pool.trace.extend(reduced.trace)
        if not reduced.accepted:
            logger.info("minimal search stopped after %d rounds: no subset reaches retention", pool.rounds)
            break
        pool.candidates.append(reduced)
        pool.eliminated += len(reduced.features)
        remaining = [f for f in remaining if f not in set(reduced.features)]
    return pool


def summarize_minimal(pool: CandidatePool, n_layers: int) -> dict:
    """Layer positions and percentiles of every pooled candidate.

    Layer position is normalised depth ``l / L`` in (0, 1].
    """
    if not pool.candidates:
        raise ConfigurationError("empty candidate pool")
    rows = []
    for c in pool.candidates:
        locs = [feature_location(f, n_layers) for f in c.features]
        rows.append({
            "features": list(c.features),
            "layers": [l for l, _ in locs],
            "depth": [l / n_layers for l, _ in locs],
            "percentiles": [p for _, p in locs],
            "n_ft": len(c.features),
            "n_l": len({l for l, _ in locs}),
            "precision": c.report.precision[c.mode],
            "recall": c.report.recall[c.mode],
        })
    last_quartile = [any(d > 0.75 for d in r["depth"]) for r in rows]
    first_half = [any(d <= 0.5 for d in r["depth"]) for r in rows]
    return {
        "n_layers": n_layers,
        "rounds": pool.rounds,
        "candidates": rows,
        "mean_n_ft": float(np.mean([r["n_ft"] for r in rows])),
        "mean_n_l": float(np.mean([r["n_l"] for r in rows])),
        "frac_last_quartile": float(np.mean(last_quartile)),
        "frac_first_half": float(np.mean(first_half)),
    }
