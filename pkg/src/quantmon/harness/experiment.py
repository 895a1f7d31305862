"""End-to-end orchestration shared by the command line and the acceptance suite.

Every stage reads and writes files under the output directory, so a stage
can be rerun alone and a whole run is a pure function of the config.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from ..netio import load_network, save_network
from ..tensor_net import Network, accuracy
from ..training import desk_network, fit_sgd
from .bench import OverheadReport, bench_overhead
from .campaign import RecordTable, collect_campaign
from .config import CampaignConfig
from .data import load_dataset, save_dataset, synthetic_shapes
from .pipeline import PipelineResult, train_eval_pipeline
from .report import emit_report

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Paths:
    out: Path
    data: Path
    network: Path
    records: Path

    @classmethod
    def of(cls, config: CampaignConfig) -> Paths:
        out = config.output_dir()

        def under(p: str) -> Path:
            return Path(p) if Path(p).is_absolute() else out / p
        return cls(out, under(config.data_dir), under(config.network_path), out / "records.csv")


def generate_data(config: CampaignConfig) -> None:
    paths = Paths.of(config)
    paths.data.mkdir(parents=True, exist_ok=True)
    for name, n, seed in (("train", config.n_train, config.data_seed),
                          ("test", config.n_test, config.data_seed + 1)):
        images, labels = synthetic_shapes(n, seed, channels=config.channels)
        save_dataset(paths.data / name, images, labels)


def load_data(config: CampaignConfig, split: str) -> tuple[np.ndarray, np.ndarray]:
    prefix = Paths.of(config).data / split
    if not Path(str(prefix) + "-images.idx").exists():
        generate_data(config)
    return load_dataset(prefix)


def train_network(config: CampaignConfig) -> tuple[Network, float]:
    """Train the desk model on the stored training set; returns it with its test accuracy."""
    x_train, y_train = load_data(config, "train")
    x_test, y_test = load_data(config, "test")
    net = desk_network(config.channels, config.net_seed)
    fit_sgd(net, x_train, y_train, epochs=config.train_epochs, seed=config.net_seed)
    acc = accuracy(net, x_test, y_test)
    if acc < config.min_test_accuracy:
        logger.warning("test accuracy %.4f below the configured minimum %.4f", acc, config.min_test_accuracy)
    path = Paths.of(config).network
    path.parent.mkdir(parents=True, exist_ok=True)
    save_network(net, path)
    return net, acc


def get_network(config: CampaignConfig) -> Network:
    path = Paths.of(config).network
    if not path.exists():
        train_network(config)
    return load_network(path)


def campaign_images(config: CampaignConfig) -> tuple[np.ndarray, np.ndarray]:
    images, _ = load_data(config, "test")
    if config.n_images > len(images):
        raise ConfigurationError(f"campaign wants {config.n_images} images, test set has {len(images)}")
    return images[: config.n_images], np.arange(config.n_images)


def run_campaign_stage(config: CampaignConfig, write: bool = True) -> RecordTable:
    net = get_network(config)
    images, ids = campaign_images(config)
    table = collect_campaign(net, images, config, ids)
    if write:
        Paths.of(config).out.mkdir(parents=True, exist_ok=True)
        table.to_csv(Paths.of(config).records)
    return table


def get_records(config: CampaignConfig) -> RecordTable:
    path = Paths.of(config).records
    if path.exists():
        return RecordTable.from_csv(path)
    return run_campaign_stage(config)


def representative_features(result: PipelineResult) -> tuple[int, ...]:
    """The reduced feature set chosen most often over the reseeded runs.

    Sets are compared as sets; ties go to the smaller set, then to the
    earliest seed.
    """
    keyed = [tuple(sorted(r.reduced.features)) for r in result.runs]
    counts = Counter(keyed)
    first = {k: i for i, k in reversed(list(enumerate(keyed)))}
    best = min(counts, key=lambda k: (-counts[k], len(k), first[k]))
    return result.runs[first[best]].reduced.features


def run_bench(config: CampaignConfig, features, repetitions: int = 100, warmup: int = 2,
              batch_size: int = 10, n_images: int = 100) -> OverheadReport:
    net = get_network(config)
    images, _ = load_data(config, "test")
    # Images outside the campaign subset, so timing uses data the detector never saw.
    pool = images[config.n_images:] if len(images) - config.n_images >= n_images else images
    return bench_overhead(net, pool[:n_images], features, repetitions=repetitions, warmup=warmup,
                          batch_size=batch_size)


def run_experiment(config: CampaignConfig, bench: bool = False, bench_repetitions: int = 100,
                   write_records: bool = True) -> tuple[PipelineResult, OverheadReport | None, list[Path]]:
    """Data, model, campaign, detectors, reduction, search and reports in one go."""
    paths = Paths.of(config)
    table = RecordTable.from_csv(paths.records) if paths.records.exists() else \
        run_campaign_stage(config, write=write_records)
    result = train_eval_pipeline(table, config)
    overhead = run_bench(config, representative_features(result), bench_repetitions) if bench else None
    written = emit_report(result, paths.out, overhead)
    return result, overhead, written
