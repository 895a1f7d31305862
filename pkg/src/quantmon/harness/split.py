"""Image-level train/test splitting, bounds subsets and class balancing."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..detector import LabeledDataset
from ..errors import ConfigurationError
from ..monitor import QuantileBounds, anomaly_vector, bounds_from_quantiles
from .campaign import RecordTable

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Split:
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    bounds_ids: tuple[int, ...]
    seed: int = 0

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train": list(self.train_ids), "test": list(self.test_ids),
                "bounds": list(self.bounds_ids)}

    @classmethod
    def from_dict(cls, doc: dict) -> Split:
        return cls(tuple(doc["train"]), tuple(doc["test"]), tuple(doc["bounds"]), int(doc.get("seed", 0)))


def _systematic(n: int, ratio: float) -> np.ndarray:
    """Boolean test mask over n ordered items giving ``ratio`` train items per test item.

    Item j goes to test when the running test quota ``floor((j+1)/(ratio+1))``
    steps up, so every prefix (and so every stratum laid out contiguously) is
    split as evenly as integers allow.
    """
    j = np.arange(n)
    return np.floor((j + 1) / (ratio + 1)) > np.floor(j / (ratio + 1))


def image_strata(table: RecordTable) -> dict[int, str]:
    """Stratum of each image: the sorted set of SDC labels its records carry."""
    strata = {}
    for i in table.images().tolist():
        labels = sorted(set(table.label[(table.image_id == i) & (table.outcome == "sdc")].tolist()))
        strata[i] = "+".join(labels) or "none"
    return strata


def split_dataset(table: RecordTable, ratio: float = 2.0, seed: int = 0,
                  bounds_fraction: float = 0.2) -> Split:
    """Stratified image-level split with a fault-free bounds subset of the train images.

    All records of one image land on the same side. Images are grouped by
    their SDC label profile, shuffled within each group, and dealt out in
    ``ratio``:1 proportion.
    """
    if len(table) == 0:
        raise ConfigurationError("cannot split an empty record table")
    if ratio <= 0 or not 0 < bounds_fraction <= 1:
        raise ConfigurationError("ratio must be > 0 and bounds_fraction in (0, 1]")
    rng = np.random.default_rng(seed)
    strata = image_strata(table)
    order = []
    for key in sorted(set(strata.values())):
        ids = np.array(sorted(i for i, s in strata.items() if s == key), dtype=np.int64)
        order.extend(rng.permutation(ids).tolist())
    test_mask = _systematic(len(order), ratio)
    train = sorted(i for i, t in zip(order, test_mask) if not t)
    test = sorted(i for i, t in zip(order, test_mask) if t)
    if not train or not test:
        raise ConfigurationError(f"{len(order)} images are too few for a {ratio}:1 split")
    n_bounds = max(1, int(round(bounds_fraction * len(train))))
    bounds = sorted(rng.choice(train, size=n_bounds, replace=False).tolist())
    for side, ids in (("train", train), ("test", test)):
        present = set(table.label[np.isin(table.image_id, ids)].tolist())
        missing = set(table.label.tolist()) - present
        if missing:
            logger.warning("labels %s absent from the %s side", sorted(missing), side)
    return Split(tuple(train), tuple(test), tuple(bounds), seed)


def bounds_for_split(table: RecordTable, split: Split) -> QuantileBounds:
    """Reference bounds from the fault-free records of the bounds images."""
    mask = np.isin(table.image_id, split.bounds_ids) & (table.kind == "fault_free")
    return bounds_from_quantiles(table.quantiles[mask], source=f"split seed {split.seed}")


def balance_indices(labels: np.ndarray, kinds: np.ndarray, ratio: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Row indices keeping every faulty row and about ``1/ratio`` as many ``none`` rows.

    Fault-free reference rows are preferred; masked-fault rows fill the rest.
    """
    faulty = np.flatnonzero(labels != "none")
    free = np.flatnonzero((labels == "none") & (kinds == "fault_free"))
    masked = np.flatnonzero((labels == "none") & (kinds != "fault_free"))
    target = int(round(len(faulty) / ratio)) if ratio > 0 else len(free) + len(masked)
    if len(free) >= target:
        none = rng.choice(free, size=target, replace=False)
    else:
        extra = min(target - len(free), len(masked))
        none = np.concatenate([free, rng.choice(masked, size=extra, replace=False)])
    return np.sort(np.concatenate([faulty, none]))


def detector_dataset(table: RecordTable, image_ids, bounds: QuantileBounds,
                     balance_ratio: float | None, seed: int) -> LabeledDataset:
    """Anomaly features for the non-DUE records of ``image_ids``, optionally balanced."""
    mask = np.isin(table.image_id, image_ids) & (table.outcome != "due")
    rows = np.flatnonzero(mask)
    if balance_ratio:
        rng = np.random.default_rng(seed)
        rows = rows[balance_indices(table.label[rows], table.kind[rows], balance_ratio, rng)]
    X = anomaly_vector(table.quantiles[rows], bounds)
    return LabeledDataset(X, table.label[rows], table.image_id[rows])


def build_datasets(table: RecordTable, split: Split, bounds: QuantileBounds, balance_ratio: float,
                   seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    train = detector_dataset(table, split.train_ids, bounds, balance_ratio, seed)
    test = detector_dataset(table, split.test_ids, bounds, balance_ratio, seed + 1)
    if len(set(train.y.tolist())) < 2:
        raise ConfigurationError("training data has a single class; the campaign produced no usable SDCs")
    return train, test
