"""Per-image inference time with and without monitoring.

Variants:
    plain     forward pass only
    reduced   quantile markers of the layers/percentiles a reduced model uses
    full      all 11 markers of every monitored layer
    tracing   baseline storing every layer's per-channel feature sums

Within a repetition every batch is pushed through all variants back to back,
in an order that rotates from batch to batch, so drift in machine speed hits
all variants alike. Each repetition is then a block: besides the raw
confidence interval of each variant's mean, the report gives a
block-adjusted one computed after removing the per-repetition speed level
shared by all variants.
"""

from __future__ import annotations

import gc
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigurationError
from ..monitor import PERCENTILES, FeatureMapTracer, QuantileMonitor, feature_location
from ..tensor_net import Network, forward

VARIANTS = ("plain", "reduced", "full", "tracing")
Z95 = 1.959963984540054


@dataclass
class VariantTiming:
    name: str
    per_image: np.ndarray  # seconds, one entry per repetition
    adjusted: np.ndarray | None = None  # per_image minus the repetition's shared level

    @property
    def mean(self) -> float:
        return float(self.per_image.mean())

    @property
    def std(self) -> float:
        return float(self.per_image.std(ddof=1)) if len(self.per_image) > 1 else 0.0

    @property
    def ci95(self) -> tuple[float, float]:
        half = Z95 * self.std / np.sqrt(len(self.per_image))
        return self.mean - half, self.mean + half

    @property
    def median_of_means(self) -> float:
        groups = np.array_split(self.per_image, max(1, min(10, len(self.per_image))))
        return float(np.median([g.mean() for g in groups]))

    def block_ci95(self, n_variants: int) -> tuple[float, float]:
        """CI of the mean with the per-repetition level removed.

        Residuals around repetition means lose one degree of freedom per
        block, hence the ``V / (V - 1)`` variance correction.
        """
        if self.adjusted is None or n_variants < 2:
            return self.ci95
        sd = self.adjusted.std(ddof=1) * np.sqrt(n_variants / (n_variants - 1))
        half = Z95 * sd / np.sqrt(len(self.adjusted))
        return self.mean - half, self.mean + half


@dataclass
class OverheadReport:
    timings: dict[str, VariantTiming]
    batch_size: int
    n_images: int
    repetitions: int
    warmup: int
    taps: dict[str, list] = field(default_factory=dict)

    def overhead(self, name: str) -> float:
        """Relative extra time over the plain forward pass."""
        base = self.timings["plain"].mean
        return self.timings[name].mean / base - 1.0

    def rows(self) -> list[dict]:
        out = []
        v = len(self.timings)
        for name, t in self.timings.items():
            lo, hi = t.ci95
            blo, bhi = t.block_ci95(v)
            out.append({"variant": name, "mean_s": t.mean, "std_s": t.std, "median_of_means_s": t.median_of_means,
                        "ci95_low_s": lo, "ci95_high_s": hi, "block_ci95_low_s": blo, "block_ci95_high_s": bhi,
                        "overhead": self.overhead(name), "repetitions": self.repetitions,
                        "batch_size": self.batch_size, "n_images": self.n_images})
        return out


def reduced_taps(features: Sequence[int], n_layers: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Layers and percentiles needed to compute the given anomaly features."""
    locs = [feature_location(f, n_layers) for f in features]
    layers = tuple(sorted({l for l, _ in locs}))
    percentiles = tuple(p for p in PERCENTILES if p in {p for _, p in locs})
    return layers, percentiles


def _variant(name: str, net: Network, layers, percentiles) -> Callable[[np.ndarray], object]:
    L = net.n_monitored
    if name == "plain":
        return lambda b: forward(net, b)
    if name == "full":
        return lambda b: forward(net, b, [QuantileMonitor(L)])
    if name == "reduced":
        return lambda b: forward(net, b, [QuantileMonitor(L, layers, percentiles)])
    if name == "tracing":
        store: list = []

        def run(b):
            tracer = FeatureMapTracer()
            out = forward(net, b, [tracer])
            store.append(tracer.trace)
            return out
        return run
    raise ConfigurationError(f"unknown benchmark variant {name!r}")


def bench_overhead(
    net: Network,
    images: np.ndarray,
    features: Sequence[int],
    variants: Sequence[str] = VARIANTS,
    repetitions: int = 100,
    warmup: int = 2,
    batch_size: int = 10,
) -> OverheadReport:
    """Time each variant over ``images`` for ``repetitions`` rounds.

    Args:
        features: Anomaly feature indices of the reduced model; they decide
            which layers and percentiles the reduced monitor taps.
    """
    if warmup < 1 or repetitions < 10:
        raise ConfigurationError("need warmup >= 1 and repetitions >= 10")
    if "plain" not in variants:
        raise ConfigurationError("the plain variant is required as the overhead reference")
    layers, percentiles = reduced_taps(features, net.n_monitored)
    batches = [np.ascontiguousarray(images[i:i + batch_size]) for i in range(0, len(images), batch_size)]
    fns = {v: _variant(v, net, layers, percentiles) for v in variants}
    for _ in range(warmup):
        for fn in fns.values():
            for b in batches:
                fn(b)
    names = list(variants)
    times = np.zeros((repetitions, len(names)))
    gc_was = gc.isenabled()
    gc.disable()
    try:
        for rep in range(repetitions):
            for bi, b in enumerate(batches):
                k = (rep * len(batches) + bi) % len(names)
                for j in list(range(k, len(names))) + list(range(k)):
                    fn = fns[names[j]]
                    t0 = time.perf_counter()
                    fn(b)
                    times[rep, j] += time.perf_counter() - t0
    finally:
        if gc_was:
            gc.enable()
    times /= len(images)
    adjusted = times - times.mean(axis=1, keepdims=True) + times.mean()
    timings = {v: VariantTiming(v, times[:, j], adjusted[:, j]) for j, v in enumerate(names)}
    return OverheadReport(timings, batch_size, len(images),
                          repetitions, warmup, {"layers": list(layers), "percentiles": list(percentiles)})
