"""Network persistence.

Binary "QSNT" layout (all integers u32, all floats binary32, little-endian)::

    b"QSNT" | version | n_layers | in_c | in_h | in_w
    then per layer: kind tag, followed by
      conv2d    (0): out, in, kh, kw, stride, padding, weight[out*in*kh*kw], bias[out]
      relu      (1): -
      maxpool2d (2): window, stride
      linear    (3): out, in, weight[out*in], bias[out]

The text config describes topology only, one layer per line::

    input 1 28 28
    conv2d 8 3 stride=1 padding=1     # out_channels kernel_size
    relu
    maxpool2d 2 stride=2
    linear 10                          # out_features
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ConfigurationError,
    NetworkFormatError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .tensor_net import Conv2d, Linear, MaxPool2d, Network, ReLU

MAGIC = b"QSNT"
FORMAT_VERSION = 1
_TAGS = {"conv2d": 0, "relu": 1, "maxpool2d": 2, "linear": 3}


def _u32(*values: int) -> bytes:
    return struct.pack(f"<{len(values)}I", *values)


def _f32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def network_to_bytes(net: Network) -> bytes:
    parts = [MAGIC, _u32(FORMAT_VERSION, len(net.layers), *net.input_shape)]
    for layer in net.layers:
        parts.append(_u32(_TAGS[layer.kind]))
        if isinstance(layer, Conv2d):
            parts.append(_u32(*layer.weight.shape, layer.stride, layer.padding))
            parts += [_f32(layer.weight), _f32(layer.bias)]
        elif isinstance(layer, MaxPool2d):
            parts.append(_u32(layer.window, layer.stride))
        elif isinstance(layer, Linear):
            parts.append(_u32(*layer.weight.shape))
            parts += [_f32(layer.weight), _f32(layer.bias)]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"payload truncated: need {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, count: int = 1) -> tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count))

    def f32(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)


def network_from_bytes(data: bytes) -> Network:
    if len(data) >= len(MAGIC) and data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    r = _Reader(data)
    r.take(4)
    (version,) = r.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version} not supported (expected {FORMAT_VERSION})")
    n_layers, c, h, w = r.u32(4)
    layers = []
    for _ in range(n_layers):
        (tag,) = r.u32()
        if tag == _TAGS["conv2d"]:
            out_c, in_c, kh, kw, stride, padding = r.u32(6)
            weight = r.f32((out_c, in_c, kh, kw))
            layers.append(Conv2d(weight, r.f32((out_c,)), stride, padding))
        elif tag == _TAGS["relu"]:
            layers.append(ReLU())
        elif tag == _TAGS["maxpool2d"]:
            layers.append(MaxPool2d(*r.u32(2)))
        elif tag == _TAGS["linear"]:
            out_f, in_f = r.u32(2)
            weight = r.f32((out_f, in_f))
            layers.append(Linear(weight, r.f32((out_f,))))
        else:
            raise NetworkFormatError(f"unknown layer tag {tag} at offset {r.pos - 4}")
    if r.pos != len(data):
        raise NetworkFormatError(f"{len(data) - r.pos} trailing bytes after last layer")
    return Network(layers, (c, h, w))


def save_network(net: Network, path: str | Path) -> None:
    Path(path).write_bytes(network_to_bytes(net))


def load_network(path: str | Path) -> Network:
    return network_from_bytes(Path(path).read_bytes())


def network_digest(net: Network) -> str:
    """SHA-256 of the serialized network; equal digests mean bitwise-equal weights."""
    return hashlib.sha256(network_to_bytes(net)).hexdigest()


def parse_network_config(text: str, seed: int = 0) -> Network:
    """Build a network from the one-layer-per-line text format.

    Weights are He-initialised from ``seed``; biases start at zero.
    """
    rng = np.random.default_rng(seed)
    input_shape = None
    layers = []
    shape = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        kind, args = words[0], [w for w in words[1:] if "=" not in w]
        opts = dict(w.split("=", 1) for w in words[1:] if "=" in w)
        try:
            if kind == "input":
                input_shape = tuple(int(a) for a in args)
                if len(input_shape) != 3:
                    raise ConfigurationError("input needs C H W")
                shape = input_shape
                continue
            if shape is None:
                raise ConfigurationError("the first line must be 'input C H W'")
            if kind == "conv2d":
                out_c, k = int(args[0]), int(args[1])
                fan_in = shape[0] * k * k
                weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_c, shape[0], k, k))
                layer = Conv2d(weight, np.zeros(out_c), int(opts.get("stride", 1)),
                               int(opts.get("padding", 0)))
            elif kind == "relu":
                layer = ReLU()
            elif kind == "maxpool2d":
                window = int(args[0]) if args else 2
                layer = MaxPool2d(window, int(opts.get("stride", window)))
            elif kind == "linear":
                out_f, fan_in = int(args[0]), int(np.prod(shape))
                weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_f, fan_in))
                layer = Linear(weight, np.zeros(out_f))
            else:
                raise ConfigurationError(f"unknown layer kind {kind!r}")
            shape = layer.output_shape(shape)
        except (IndexError, ValueError) as exc:
            raise ConfigurationError(f"line {lineno}: {raw.strip()!r}: {exc}") from exc
        layers.append(layer)
    if input_shape is None:
        raise ConfigurationError("network config has no 'input' line")
    return Network(layers, input_shape)


def network_to_config(net: Network) -> str:
    lines = ["input " + " ".join(str(s) for s in net.input_shape)]
    for layer in net.layers:
        if isinstance(layer, Conv2d):
            lines.append(f"conv2d {layer.out_channels} {layer.weight.shape[2]} "
                         f"stride={layer.stride} padding={layer.padding}")
        elif isinstance(layer, MaxPool2d):
            lines.append(f"maxpool2d {layer.window} stride={layer.stride}")
        elif isinstance(layer, Linear):
            lines.append(f"linear {layer.weight.shape[0]}")
        else:
            lines.append("relu")
    return "\n".join(lines) + "\n"
