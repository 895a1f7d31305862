"""Quantile-marker distillation of convolution activations.

For every monitored layer the spatial sum of each feature map is taken, and
the resulting per-channel sums are reduced to 11 deciles. Fault-free minima
and maxima of these markers form reference bounds; at run time each marker is
squashed against its bounds into an anomaly feature in (0, 1).

Anomaly feature vectors are unrolled percentile-major: index
``k = p_idx * L + (l - 1)`` holds layer ``l`` at percentile
``PERCENTILES[p_idx]``, i.e. ``[q^1_0, q^2_0, ..., q^L_0, q^1_10, ..., q^L_100]``.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DueError
from .tensor_net import Network, forward

PERCENTILES = tuple(range(0, 101, 10))
N_PERCENTILES = len(PERCENTILES)
EPS = 1e-8

# Largest/smallest doubles strictly inside (0, 1).
_FEATURE_LO = np.nextafter(0.0, 1.0)
_FEATURE_HI = np.nextafter(1.0, 0.0)


def feature_sums(t: np.ndarray) -> np.ndarray:
    """Spatial sum of every feature map, shape (N, C), accumulated in binary32."""
    t = np.asarray(t, dtype=np.float32)
    n, c = t.shape[:2]
    with np.errstate(over="ignore", invalid="ignore"):
        return t.reshape(n, c, -1).sum(axis=-1, dtype=np.float32)


def due_check(t: np.ndarray) -> bool:
    """True iff any element is NaN or +-Inf."""
    return not bool(np.isfinite(t).all())


def layer_quantiles(sums: np.ndarray, percentiles: Sequence[int] = PERCENTILES) -> np.ndarray:
    """Linearly interpolated quantiles over the last (channel) axis.

    Uses the order-statistic interpolation ``s[j] + g * (s[j+1] - s[j])`` with
    ``j + g = (C - 1) * p / 100``. Accepts one row of sums or an (N, C) matrix
    and returns float64 of shape (..., len(percentiles)).
    """
    s = np.sort(np.asarray(sums, dtype=np.float64), axis=-1)
    c = s.shape[-1]
    if c < 1:
        raise ConfigurationError("need at least one channel")
    pos = np.array([(c - 1) * p / 100.0 for p in percentiles])
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    hi = np.minimum(lo + 1, c - 1)
    lo_v = s[..., lo]
    with np.errstate(invalid="ignore"):
        interp = lo_v + frac * (s[..., hi] - lo_v)
    # Integer positions take the order statistic itself (keeps Inf intact).
    return np.where(frac == 0.0, lo_v, interp)


def f_norm(a, a_min, a_max):
    """Squash a marker against its bounds into (-1, 1).

    Positive outside ``[a_min, a_max]``, non-positive inside, exactly zero at
    ``a == a_max``. Infinite ``a`` saturates to +1.
    """
    a, a_min, a_max = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (a, a_min, a_max)))
    above = (a - a_max) / (np.abs(a_max) + EPS)
    below = (a_min - a) / (np.abs(a_min) + EPS)
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.where(a >= a_min, np.tanh(above), np.tanh(below))
    out = np.where(np.isposinf(a) | np.isneginf(a), 1.0, out)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class QuantileBounds:
    """Per-(layer, percentile) fault-free envelope, arrays of shape (L, 11)."""

    qmin: np.ndarray
    qmax: np.ndarray
    source: str = ""

    def __post_init__(self):
        if self.qmin.shape != self.qmax.shape or self.qmin.ndim != 2:
            raise ConfigurationError("bounds min/max must be matching (L, P) arrays")
        if np.any(self.qmin > self.qmax):
            raise ConfigurationError("bounds violate min <= max")

    @property
    def n_layers(self) -> int:
        return self.qmin.shape[0]


def bounds_from_quantiles(quantiles: np.ndarray, source: str = "") -> QuantileBounds:
    """Envelope over samples of a (N, L, 11) quantile array."""
    q = np.asarray(quantiles, dtype=np.float64)
    if q.ndim != 3 or len(q) == 0:
        raise ConfigurationError(f"expected non-empty (N, L, P) quantiles, got shape {q.shape}")
    if not np.isfinite(q).all():
        raise DueError("non-finite quantiles in the bounds dataset")
    return QuantileBounds(q.min(axis=0), q.max(axis=0), source)


def extract_bounds(net: Network, images: np.ndarray, batch_size: int = 100,
                   source: str = "") -> QuantileBounds:
    """Run the fault-free images and take the min/max envelope of their markers.

    Raises ``DueError`` if any inference produces NaN/Inf.
    """
    if len(images) == 0:
        raise ConfigurationError("bounds dataset is empty")
    parts = []
    for i in range(0, len(images), batch_size):
        mon = QuantileMonitor(net.n_monitored)
        forward(net, images[i:i + batch_size], [mon])
        if mon.due.any():
            raise DueError(f"DUE during bound extraction in batch starting at image {i}")
        parts.append(mon.quantiles)
    return bounds_from_quantiles(np.concatenate(parts), source)


def anomaly_vector(quantiles: np.ndarray, bounds: QuantileBounds) -> np.ndarray:
    """Anomaly features for (L, 11) or (N, L, 11) quantiles, unrolled percentile-major."""
    q = np.asarray(quantiles, dtype=np.float64)
    if q.shape[-2:] != bounds.qmin.shape:
        raise ConfigurationError(
            f"quantile grid {q.shape[-2:]} does not match bounds grid {bounds.qmin.shape}"
        )
    feat = 0.5 * (f_norm(q, bounds.qmin, bounds.qmax) + 1.0)
    feat = np.clip(feat, _FEATURE_LO, _FEATURE_HI)
    # (..., L, P) -> (..., P, L) -> flat: percentile-major.
    return np.swapaxes(feat, -1, -2).reshape(q.shape[:-2] + (-1,))


def feature_index(layer: int, percentile: int, n_layers: int) -> int:
    """Position of (layer, percentile) in the anomaly feature vector (layer is 1-based)."""
    if not 1 <= layer <= n_layers:
        raise ConfigurationError(f"layer {layer} outside 1..{n_layers}")
    return PERCENTILES.index(percentile) * n_layers + (layer - 1)


def feature_location(index: int, n_layers: int) -> tuple[int, int]:
    """Inverse of ``feature_index``: (layer, percentile)."""
    if not 0 <= index < n_layers * N_PERCENTILES:
        raise ConfigurationError(f"feature index {index} outside 0..{n_layers * N_PERCENTILES - 1}")
    p_idx, l0 = divmod(index, n_layers)
    return l0 + 1, PERCENTILES[p_idx]


def feature_name(index: int, n_layers: int) -> str:
    layer, p = feature_location(index, n_layers)
    return f"q[layer={layer}][p={p}]"


@functools.lru_cache(maxsize=64)
def _interp_plan(c: int, percentiles: tuple[int, ...]) -> tuple:
    # Interpolation positions depend only on the channel count.
    pos = np.array([(c - 1) * p / 100.0 for p in percentiles])
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    return lo, np.minimum(lo + 1, c - 1), frac, frac == 0.0


class QuantileMonitor:
    """Forward hook recording quantile markers of the tapped layers.

    Args:
        n_layers: Number of monitored convolution layers in the network.
        layers: 1-based layers to tap (default: all).
        percentiles: Percentiles to compute (default: all 11 deciles).

    After a forward pass ``quantiles`` is (N, L, P) with NaN for untapped
    layers, and ``due`` flags samples whose feature sums contained NaN/Inf.
    Any non-finite activation makes its channel sum non-finite, so checking
    the sums covers the activations too.
    """

    def __init__(self, n_layers: int, layers: Iterable[int] | None = None,
                 percentiles: Sequence[int] = PERCENTILES):
        self.n_layers = n_layers
        self.layers = frozenset(layers) if layers is not None else frozenset(range(1, n_layers + 1))
        self.percentiles = tuple(percentiles)
        self.quantiles: np.ndarray | None = None
        self.due: np.ndarray | None = None

    def reset(self) -> None:
        self.quantiles = None
        self.due = None

    def __call__(self, l: int, out: np.ndarray) -> None:
        n = out.shape[0]
        if self.quantiles is None:
            self.quantiles = np.full((n, self.n_layers, len(self.percentiles)), np.nan)
            self.due = np.zeros(n, dtype=bool)
        if l not in self.layers:
            return
        sums = feature_sums(out)
        finite = np.isfinite(sums).all(axis=1)
        self.due |= ~finite
        if finite.all():
            lo, hi, frac, exact = _interp_plan(sums.shape[1], self.percentiles)
            s = np.sort(sums.astype(np.float64), axis=1)
            lo_v = s[:, lo]
            self.quantiles[:, l - 1] = np.where(exact, lo_v, lo_v + frac * (s[:, hi] - lo_v))
        else:
            self.quantiles[:, l - 1] = layer_quantiles(sums, self.percentiles)


class FeatureMapTracer:
    """Baseline hook that stores every per-layer feature-sum matrix (no quantiles)."""

    def __init__(self):
        self.trace: list[np.ndarray] = []

    def __call__(self, l: int, out: np.ndarray) -> None:
        self.trace.append(feature_sums(out).copy())


# ----------------------------------------------------------------------------
# CSV persistence
# ----------------------------------------------------------------------------


def write_bounds_csv(path: str | Path, bounds: QuantileBounds) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "percentile", "min", "max"])
        for l in range(bounds.n_layers):
            for j, p in enumerate(PERCENTILES):
                w.writerow([l + 1, p, repr(float(bounds.qmin[l, j])), repr(float(bounds.qmax[l, j]))])


def read_bounds_csv(path: str | Path, source: str = "") -> QuantileBounds:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n_layers = max(int(r["layer"]) for r in rows)
    qmin = np.full((n_layers, N_PERCENTILES), np.nan)
    qmax = np.full((n_layers, N_PERCENTILES), np.nan)
    for r in rows:
        l, j = int(r["layer"]) - 1, PERCENTILES.index(int(r["percentile"]))
        qmin[l, j], qmax[l, j] = float(r["min"]), float(r["max"])
    if np.isnan(qmin).any() or np.isnan(qmax).any():
        raise ConfigurationError(f"{path}: incomplete bounds grid")
    return QuantileBounds(qmin, qmax, source or str(path))


def write_vectors_csv(path: str | Path, image_ids: Sequence[int], labels: Sequence[str],
                      vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors)
    n_layers = vectors.shape[1] // N_PERCENTILES
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "label"] + [f"f{k}_l{feature_location(k, n_layers)[0]}"
                                             f"_p{feature_location(k, n_layers)[1]}"
                                             for k in range(vectors.shape[1])])
        for i, lab, v in zip(image_ids, labels, vectors):
            w.writerow([int(i), lab] + [repr(float(x)) for x in v])


def read_vectors_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = list(reader)
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    labels = np.array([r[1] for r in rows])
    vectors = np.array([[float(x) for x in r[2:]] for r in rows])
    return ids, labels, vectors
