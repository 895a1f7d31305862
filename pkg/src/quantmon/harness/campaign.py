"""Fault-injection campaign: one fault per inference, one record per inference.

For every image a fault-free reference pass is run first; its per-layer inputs
are cached so memory faults only recompute the network from the faulted
convolution onwards. Every record carries the raw quantile markers of all
monitored layers, so anomaly features can be derived later against whichever
bounds a given train/test split calls for.

Each injection draws from its own RNG stream seeded by
``(seed, image_id, fi_index)``, which makes any single record reproducible in
isolation.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from ..corruption import INPUT_FAULTS, FaultSpace, FaultSpec, NeuronFault, WeightPatch, apply_input_fault, \
    sample_fault_spec
from ..errors import ConfigurationError, DueError
from ..monitor import PERCENTILES, QuantileMonitor
from ..tensor_net import Network, run_layers
from .config import CampaignConfig

logger = logging.getLogger(__name__)

OUTCOMES = ("masked", "sdc", "due")
KINDS = ("fault_free", "random", "accelerated")


@dataclass
class OutcomeRecord:
    image_id: int
    fi_index: int
    kind: str
    spec: FaultSpec
    outcome: str
    label: str
    ref_top1: int
    faulty_top1: int  # -1 on DUE
    quantiles: np.ndarray  # (L, 11)


def label_outcome(ref_top1: int, logits: np.ndarray, due: bool, spec: FaultSpec) -> tuple[str, str, int]:
    """Classify one faulty inference.

    Returns ``(outcome, label, faulty_top1)``: DUE if anything went non-finite,
    SDC if the top-1 class changed, masked otherwise. Only SDCs carry the
    fault's class as label; masked faults are labelled ``none``.
    """
    logits = np.asarray(logits).reshape(-1)
    if due or not np.isfinite(logits).all():
        return "due", "none", -1
    pred = int(np.argmax(logits))
    if pred != ref_top1 and spec.fault_class != "none":
        return "sdc", spec.fault_class, pred
    return "masked", "none", pred


class _ImageRunner:
    """Reference pass plus cached prefix for one image."""

    def __init__(self, net: Network, x: np.ndarray, image_id: int):
        self.net = net
        self.x = x[None] if x.ndim == 3 else x
        self.L = net.n_monitored
        self.inputs: list[np.ndarray] = []
        mon = QuantileMonitor(self.L)
        logits = run_layers(net, self.x, [mon], 0, self.inputs)
        if mon.due.any() or not np.isfinite(logits).all():
            raise DueError(f"fault-free reference inference of image {image_id} produced NaN/Inf")
        self.ref_quantiles = mon.quantiles[0]
        self.ref_logits = logits[0]
        self.ref_top1 = int(np.argmax(logits[0]))
        self.positions = net.conv_positions

    def run(self, spec: FaultSpec, config) -> tuple[np.ndarray, np.ndarray, bool]:
        """Faulty inference: (logits, quantiles (L, 11), due flag)."""
        mon = QuantileMonitor(self.L)
        if spec.fault_class == "none":
            return self.ref_logits.copy(), self.ref_quantiles.copy(), False
        if spec.fault_class in INPUT_FAULTS:
            logits = run_layers(self.net, apply_input_fault(self.x, spec, config), [mon])
            return logits, mon.quantiles[0], bool(mon.due[0])
        pos = self.positions[spec.layer - 1]
        if spec.target == "weight":
            with WeightPatch(self.net, spec):
                logits = run_layers(self.net, self.inputs[pos], [mon], pos)
        else:
            hooks = [NeuronFault(spec, self.net.conv_output_shape(spec.layer)), mon]
            logits = run_layers(self.net, self.inputs[pos], hooks, pos)
        q = mon.quantiles[0]
        q[: spec.layer - 1] = self.ref_quantiles[: spec.layer - 1]
        return logits, q, bool(mon.due[0])


def fi_rng(seed: int, image_id: int, fi_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, image_id, fi_index])


def run_campaign(
    net: Network,
    images: np.ndarray,
    config: CampaignConfig,
    image_ids: Sequence[int] | None = None,
) -> Iterator[OutcomeRecord]:
    """Yield records for every image: the fault-free reference, the random
    injections, then the accelerated memory injections.

    ``fi_index`` 0 is the reference; random injections take 1..fis_per_image;
    accelerated epochs follow, one injection per target per epoch.

    Raises:
        DueError: A fault-free reference inference produced NaN/Inf.
    """
    if image_ids is None:
        image_ids = range(len(images))
    if len(image_ids) != len(images):
        raise ConfigurationError("image_ids and images differ in length")
    space = FaultSpace.of(net)
    random_cfg = config.fault_config()
    accel_cfgs = [config.fault_config(accelerated=True, target=t) for t in config.accelerated_targets]
    for image_id, x in zip(image_ids, images):
        image_id = int(image_id)
        runner = _ImageRunner(net, np.asarray(x, dtype=np.float32), image_id)
        yield OutcomeRecord(image_id, 0, "fault_free", FaultSpec("none"), "masked", "none",
                            runner.ref_top1, runner.ref_top1, runner.ref_quantiles.copy())
        plan = [("random", random_cfg)] * config.fis_per_image
        for _ in range(config.accelerated_epochs):
            plan.extend(("accelerated", c) for c in accel_cfgs)
        for fi_index, (kind, cfg) in enumerate(plan, start=1):
            spec = sample_fault_spec(cfg, space, fi_rng(config.seed, image_id, fi_index))
            logits, q, due = runner.run(spec, cfg)
            outcome, label, pred = label_outcome(runner.ref_top1, logits, due, spec)
            yield OutcomeRecord(image_id, fi_index, kind, spec, outcome, label, runner.ref_top1, pred, q)
        logger.debug("image %d done", image_id)


# ----------------------------------------------------------------------------
# Columnar table and CSV persistence
# ----------------------------------------------------------------------------

_META = ("image_id", "fi_index", "kind", "fault_class", "magnitude", "target", "layer", "coord",
         "bit", "seed", "outcome", "label", "ref_top1", "faulty_top1")


@dataclass
class RecordTable:
    """Campaign records as parallel arrays; ``quantiles`` is (N, L, 11)."""

    image_id: np.ndarray
    fi_index: np.ndarray
    kind: np.ndarray
    fault_class: np.ndarray
    magnitude: np.ndarray
    target: np.ndarray
    layer: np.ndarray
    coord: np.ndarray
    bit: np.ndarray
    seed: np.ndarray
    outcome: np.ndarray
    label: np.ndarray
    ref_top1: np.ndarray
    faulty_top1: np.ndarray
    quantiles: np.ndarray

    def __len__(self) -> int:
        return len(self.image_id)

    @property
    def n_layers(self) -> int:
        return self.quantiles.shape[1]

    @classmethod
    def from_records(cls, records: Iterable[OutcomeRecord]) -> RecordTable:
        cols = {k: [] for k in _META}
        qs = []
        for r in records:
            s = r.spec
            cols["image_id"].append(r.image_id)
            cols["fi_index"].append(r.fi_index)
            cols["kind"].append(r.kind)
            cols["fault_class"].append(s.fault_class)
            cols["magnitude"].append(s.magnitude or "")
            cols["target"].append(s.target or "")
            cols["layer"].append(s.layer or 0)
            cols["coord"].append(":".join(map(str, s.coord)) if s.coord else "")
            cols["bit"].append(-1 if s.bit is None else s.bit)
            cols["seed"].append(s.seed)
            cols["outcome"].append(r.outcome)
            cols["label"].append(r.label)
            cols["ref_top1"].append(r.ref_top1)
            cols["faulty_top1"].append(r.faulty_top1)
            qs.append(r.quantiles)
        if not qs:
            raise ConfigurationError("no records")
        return cls._build(cols, np.stack(qs))

    @classmethod
    def _build(cls, cols: dict, quantiles: np.ndarray) -> RecordTable:
        ints = {"image_id", "fi_index", "layer", "bit", "seed", "ref_top1", "faulty_top1"}
        arrays = {k: np.asarray(v, dtype=np.int64 if k in ints else str) for k, v in cols.items()}
        return cls(**arrays, quantiles=np.asarray(quantiles, dtype=np.float64))

    def subset(self, mask) -> RecordTable:
        return RecordTable(**{k: getattr(self, k)[mask] for k in _META + ("quantiles",)})

    def images(self) -> np.ndarray:
        return np.unique(self.image_id)

    def outcome_counts(self) -> dict[str, int]:
        return {o: int((self.outcome == o).sum()) for o in OUTCOMES}

    def to_csv(self, path: str | Path) -> None:
        L = self.n_layers
        qcols = [f"q_l{l}_p{p}" for l in range(1, L + 1) for p in PERCENTILES]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(_META) + qcols)
            meta = [getattr(self, k).tolist() for k in _META]
            flat = self.quantiles.reshape(len(self), -1).tolist()
            for i in range(len(self)):
                w.writerow([m[i] for m in meta] + [repr(v) for v in flat[i]])

    @classmethod
    def from_csv(cls, path: str | Path) -> RecordTable:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header[: len(_META)]) != _META:
                raise ConfigurationError(f"{path}: not a campaign record file")
            rows = list(reader)
        n_q = len(header) - len(_META)
        if n_q % len(PERCENTILES):
            raise ConfigurationError(f"{path}: quantile column count {n_q} not a multiple of {len(PERCENTILES)}")
        cols = {k: [r[j] for r in rows] for j, k in enumerate(_META)}
        q = np.array([[float(v) for v in r[len(_META):]] for r in rows], dtype=np.float64)
        return cls._build(cols, q.reshape(len(rows), -1, len(PERCENTILES)))


def collect_campaign(net: Network, images: np.ndarray, config: CampaignConfig,
                     image_ids: Sequence[int] | None = None) -> RecordTable:
    return RecordTable.from_records(run_campaign(net, images, config, image_ids))
