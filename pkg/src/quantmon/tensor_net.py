"""Minimal deterministic CNN inference engine.

Tensors are plain ``numpy.ndarray`` objects of dtype ``float32`` laid out as
(N, C, H, W). Every kernel accumulates in a fixed order so a forward pass is
bit-identical across runs, which fault-injection experiments rely on for a
stable fault-free baseline:

* conv2d: per output element, input channel outermost, then kernel row, then
  kernel column (the row-major order of the ``(in, kh, kw)`` weight slice);
  the bias is added last.
* linear: per output element, input features in ascending order; bias last.

Convolution layers are the monitored set. Their raw (pre-activation) outputs
are handed to hooks in layer order ``l = 1..L`` before downstream layers
consume them, and hooks may modify the buffer in place (that is how neuron
faults are injected).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

import numba
import numpy as np

from .errors import ConfigurationError, DueError

Hook = Callable[[int, np.ndarray], None]


# ----------------------------------------------------------------------------
# Layer specifications
# ----------------------------------------------------------------------------


@dataclass
class Conv2d:
    weight: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray  # (out_ch,)
    stride: int = 1
    padding: int = 0
    kind = "conv2d"

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float32)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)
        if self.weight.ndim != 4:
            raise ConfigurationError(f"conv weight must be 4-D, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ConfigurationError(
                f"conv bias shape {self.bias.shape} does not match {self.weight.shape[0]} output channels"
            )
        if self.stride < 1 or self.padding < 0:
            raise ConfigurationError(f"invalid stride={self.stride} / padding={self.padding}")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise ConfigurationError(f"conv2d expects ({self.in_channels}, H, W) input, got {shape}")
        _, h, w = shape
        kh, kw = self.weight.shape[2:]
        return (self.out_channels, conv_out_size(h, kh, self.stride, self.padding),
                conv_out_size(w, kw, self.stride, self.padding))


@dataclass
class ReLU:
    kind = "relu"

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape


@dataclass
class MaxPool2d:
    window: int = 2
    stride: int = 2
    kind = "maxpool2d"

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ConfigurationError(f"invalid pooling window={self.window} / stride={self.stride}")

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        if len(shape) != 3:
            raise ConfigurationError(f"maxpool2d expects (C, H, W) input, got {shape}")
        c, h, w = shape
        if self.window > h or self.window > w:
            raise ConfigurationError(f"pooling window {self.window} larger than input {h}x{w}")
        return (c, (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1)


@dataclass
class Linear:
    weight: np.ndarray  # (out_features, in_features)
    bias: np.ndarray  # (out_features,)
    kind = "linear"

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float32)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ConfigurationError(
                f"linear weight {self.weight.shape} / bias {self.bias.shape} are inconsistent"
            )

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        # A linear layer consumes the row-major flattening of its input.
        n_in = int(np.prod(shape))
        if n_in != self.weight.shape[1]:
            raise ConfigurationError(
                f"linear expects {self.weight.shape[1]} input features, got {n_in} from shape {shape}"
            )
        return (self.weight.shape[0],)


LayerSpec = Union[Conv2d, ReLU, MaxPool2d, Linear]


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out <= 0:
        raise ConfigurationError(
            f"kernel {kernel} with padding {padding} does not fit input extent {size}"
        )
    return out


@dataclass
class Network:
    """An ordered stack of layers with a fixed input shape (C, H, W)."""

    layers: list[LayerSpec]
    input_shape: tuple[int, int, int]
    n_classes: int = field(init=False)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        shapes = self.layer_shapes()
        if len(shapes[-1]) != 1:
            raise ConfigurationError("network must end in a linear layer producing class logits")
        self.n_classes = shapes[-1][0]

    def layer_shapes(self) -> list[tuple[int, ...]]:
        """Per-sample shape after every layer (index 0 is the input)."""
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        return shapes

    @property
    def conv_positions(self) -> list[int]:
        """Positions in ``layers`` of the monitored convolution layers."""
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, Conv2d)]

    @property
    def n_monitored(self) -> int:
        return len(self.conv_positions)

    def conv(self, l: int) -> Conv2d:
        """Convolution layer ``l`` (1-based monitored index)."""
        return self.layers[self.conv_positions[l - 1]]

    def conv_output_shape(self, l: int) -> tuple[int, int, int]:
        return self.layer_shapes()[self.conv_positions[l - 1] + 1]

    def copy(self) -> Network:
        layers = []
        for layer in self.layers:
            if isinstance(layer, Conv2d):
                layers.append(Conv2d(layer.weight.copy(), layer.bias.copy(), layer.stride, layer.padding))
            elif isinstance(layer, Linear):
                layers.append(Linear(layer.weight.copy(), layer.bias.copy()))
            elif isinstance(layer, MaxPool2d):
                layers.append(MaxPool2d(layer.window, layer.stride))
            else:
                layers.append(ReLU())
        return Network(layers, self.input_shape)

    def n_parameters(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers
                   if isinstance(layer, (Conv2d, Linear)))


# ----------------------------------------------------------------------------
# Kernels
# ----------------------------------------------------------------------------


@numba.njit(cache=True)
def _conv2d_kernel(x, w, b, stride, pad, out):
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    oh = out.shape[2]
    ow = out.shape[3]
    xp = np.zeros((ci, h + 2 * pad, wd + 2 * pad), dtype=np.float32)
    acc = np.empty(ow, dtype=np.float32)
    for s in range(n):
        xp[:, pad:pad + h, pad:pad + wd] = x[s]
        for o in range(co):
            for y in range(oh):
                for xx in range(ow):
                    acc[xx] = np.float32(0.0)
                for c in range(ci):
                    for i in range(kh):
                        row = xp[c, y * stride + i]
                        for j in range(kw):
                            wv = w[o, c, i, j]
                            for xx in range(ow):
                                acc[xx] += row[xx * stride + j] * wv
                bo = b[o]
                for xx in range(ow):
                    out[s, o, y, xx] = acc[xx] + bo


@numba.njit(cache=True)
def _maxpool2d_kernel(x, window, stride, out):
    n, c, _, _ = x.shape
    oh = out.shape[2]
    ow = out.shape[3]
    for s in range(n):
        for ch in range(c):
            for y in range(oh):
                for xx in range(ow):
                    m = x[s, ch, y * stride, xx * stride]
                    for i in range(window):
                        for j in range(window):
                            v = x[s, ch, y * stride + i, xx * stride + j]
                            # NaN wins so invalid symbols stay visible downstream.
                            if v != v:
                                m = v
                            elif m == m and v > m:
                                m = v
                    out[s, ch, y, xx] = m


@numba.njit(cache=True)
def _linear_kernel(x, w, b, out):
    n, n_in = x.shape
    n_out = w.shape[0]
    wt = np.ascontiguousarray(w.T)
    acc = np.empty(n_out, dtype=np.float32)
    for s in range(n):
        for o in range(n_out):
            acc[o] = np.float32(0.0)
        for i in range(n_in):
            xv = x[s, i]
            for o in range(n_out):
                acc[o] += wt[i, o] * xv
        for o in range(n_out):
            out[s, o] = acc[o] + b[o]


def _as_batch(x: np.ndarray, ndim: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != ndim:
        raise ConfigurationError(f"expected a {ndim}-D tensor, got shape {x.shape}")
    return np.ascontiguousarray(x, dtype=np.float32)


def conv2d(x: np.ndarray, layer: Conv2d) -> np.ndarray:
    x = _as_batch(x, 4)
    _, oh, ow = layer.output_shape(x.shape[1:])
    out = np.empty((x.shape[0], layer.out_channels, oh, ow), dtype=np.float32)
    _conv2d_kernel(x, layer.weight, layer.bias, layer.stride, layer.padding, out)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise ``max(0, x)``; NaN propagates."""
    x = np.asarray(x, dtype=np.float32)
    return np.where(x < 0, np.float32(0.0), x)


def maxpool2d(x: np.ndarray, window: int = 2, stride: int = 2) -> np.ndarray:
    x = _as_batch(x, 4)
    c, oh, ow = MaxPool2d(window, stride).output_shape(x.shape[1:])
    out = np.empty((x.shape[0], c, oh, ow), dtype=np.float32)
    _maxpool2d_kernel(x, window, stride, out)
    return out


def linear(x: np.ndarray, layer: Linear) -> np.ndarray:
    x = np.asarray(x)
    x = _as_batch(x.reshape(x.shape[0], -1), 2)
    if x.shape[1] != layer.weight.shape[1]:
        raise ConfigurationError(
            f"linear expects {layer.weight.shape[1]} input features, got {x.shape[1]}"
        )
    out = np.empty((x.shape[0], layer.weight.shape[0]), dtype=np.float32)
    _linear_kernel(x, layer.weight, layer.bias, out)
    return out


def apply_layer(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    if isinstance(layer, Conv2d):
        return conv2d(x, layer)
    if isinstance(layer, ReLU):
        return relu(x)
    if isinstance(layer, MaxPool2d):
        return maxpool2d(x, layer.window, layer.stride)
    if isinstance(layer, Linear):
        return linear(x, layer)
    raise ConfigurationError(f"unknown layer type {type(layer).__name__}")


# ----------------------------------------------------------------------------
# Forward pass
# ----------------------------------------------------------------------------


def run_layers(
    net: Network,
    x: np.ndarray,
    hooks: Sequence[Hook] = (),
    start: int = 0,
    inputs: list | None = None,
) -> np.ndarray:
    """Run ``net.layers[start:]`` on ``x``.

    Args:
        net: The network.
        x: Activation entering layer ``start`` (the image batch when ``start == 0``).
        hooks: Called as ``hook(l, out)`` for every convolution layer reached,
            in order, where ``l`` is the 1-based monitored index.
        start: Position in ``net.layers`` to resume from.
        inputs: If given, receives the activation entering each executed layer
            (so a later run can resume from any position).

    Returns:
        The output of the last layer.
    """
    conv_index = {pos: l for l, pos in enumerate(net.conv_positions, start=1)}
    for pos in range(start, len(net.layers)):
        if inputs is not None:
            inputs.append(x)
        x = apply_layer(net.layers[pos], x)
        l = conv_index.get(pos)
        if l is not None:
            for hook in hooks:
                hook(l, x)
    return x


def forward(net: Network, batch: np.ndarray, hooks: Sequence[Hook] = ()) -> np.ndarray:
    """Logits for an image batch of shape (N, *net.input_shape)."""
    batch = _as_batch(batch, 4)
    if batch.shape[1:] != net.input_shape:
        raise ConfigurationError(f"batch shape {batch.shape[1:]} does not match network input {net.input_shape}")
    return run_layers(net, batch, hooks)


def top1(logits: np.ndarray) -> int | np.ndarray:
    """Predicted class (lowest index on ties).

    Accepts one logit vector or a (N, K) batch. Raises ``DueError`` if any
    logit is NaN.
    """
    logits = np.asarray(logits)
    if logits.shape[-1] < 1:
        raise ConfigurationError("top1 needs at least one class")
    if np.isnan(logits).any():
        raise DueError("NaN among logits")
    if logits.ndim == 1:
        return int(np.argmax(logits))
    return np.argmax(logits, axis=-1)


def predict_classes(net: Network, images: np.ndarray, batch_size: int = 100) -> np.ndarray:
    out = [top1(forward(net, images[i:i + batch_size])) for i in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def accuracy(net: Network, images: np.ndarray, labels: Iterable[int]) -> float:
    return float(np.mean(predict_classes(net, images) == np.asarray(labels)))
