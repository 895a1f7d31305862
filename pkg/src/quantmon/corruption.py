"""Fault universe: input corruptions and single-bit memory faults.

Input faults come in three magnitudes (low/med/high). Memory faults flip one
bit of one binary32 value, either a convolution weight or one element of a
convolution layer's output buffer. Accelerated faults restrict the bit to the
three highest exponent bits (28, 29, 30).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .tensor_net import Network

FAULT_CLASSES = ("none", "noise", "blur", "contrast", "memory")
INPUT_FAULTS = ("noise", "blur", "contrast")
MAGNITUDES = ("low", "med", "high")
ACCELERATED_BITS = (28, 29, 30)
BLUR_KERNEL = (5, 9)  # (height, width)
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class FaultSpec:
    """One injected fault.

    ``coord`` is (out_ch, in_ch, kh, kw) for weight faults and (c, h, w) for
    neuron faults; ``layer`` is the 1-based convolution index.
    """

    fault_class: str = "none"
    magnitude: str | None = None
    target: str | None = None
    layer: int | None = None
    coord: tuple[int, ...] | None = None
    bit: int | None = None
    accelerated: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.fault_class not in FAULT_CLASSES:
            raise ConfigurationError(f"unknown fault class {self.fault_class!r}")
        if self.fault_class in INPUT_FAULTS and self.magnitude not in MAGNITUDES:
            raise ConfigurationError(f"input fault needs a magnitude in {MAGNITUDES}")
        if self.fault_class == "memory":
            if self.target not in ("weight", "neuron"):
                raise ConfigurationError(f"memory fault target must be weight/neuron, got {self.target!r}")
            if self.bit is None or not 0 <= self.bit <= 31:
                raise ConfigurationError(f"bit index must be in [0, 31], got {self.bit}")
            if self.accelerated and self.bit not in ACCELERATED_BITS:
                raise ConfigurationError(f"accelerated faults use bits {ACCELERATED_BITS}, got {self.bit}")
            if self.layer is None or self.coord is None:
                raise ConfigurationError("memory fault needs a layer and a coordinate")


@dataclass
class FaultConfig:
    """What ``sample_fault_spec`` may draw, and the magnitude tables."""

    classes: Sequence[str] = ("noise", "blur", "contrast", "memory")
    magnitudes: Sequence[str] = MAGNITUDES
    targets: Sequence[str] = ("weight", "neuron")
    accelerated: bool = False
    noise_sigmas: Sequence[float] = (0.1, 1.0, 10.0)
    noise_scale: float = 1.0 / 255.0
    blur_sigmas: Sequence[float] = (0.3, 1.0, 3.0)
    contrast_factors: Sequence[float] = (0.8, 0.4, 0.1)

    def magnitude_value(self, fault_class: str, magnitude: str) -> float:
        table = {"noise": self.noise_sigmas, "blur": self.blur_sigmas,
                 "contrast": self.contrast_factors}[fault_class]
        return float(table[MAGNITUDES.index(magnitude)])


# ----------------------------------------------------------------------------
# Input corruptions
# ----------------------------------------------------------------------------


def noise_field(shape: tuple[int, ...], sigma: float, seed: int, scale: float = 1.0 / 255.0) -> np.ndarray:
    """The zero-mean Gaussian perturbation added by ``apply_gaussian_noise`` (pre-clip)."""
    if sigma < 0:
        raise ConfigurationError(f"noise sigma must be >= 0, got {sigma}")
    return np.random.default_rng(seed).normal(0.0, sigma * scale, size=shape)


def apply_gaussian_noise(img: np.ndarray, sigma: float, seed: int, scale: float = 1.0 / 255.0) -> np.ndarray:
    if sigma == 0:
        return np.array(img, dtype=np.float32, copy=True)
    noisy = img + noise_field(img.shape, sigma, seed, scale)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2
    x = np.linspace(-half, half, size)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def apply_gaussian_blur(img: np.ndarray, sigma: float, kernel: tuple[int, int] = BLUR_KERNEL) -> np.ndarray:
    """Separable Gaussian blur with a (height, width) kernel and reflect padding."""
    if sigma <= 0:
        raise ConfigurationError(f"blur sigma must be > 0, got {sigma}")
    kh, kw = kernel
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    if h < kh or w < kw:
        raise ConfigurationError(f"image {h}x{w} smaller than blur kernel {kh}x{kw}")
    pad = [(0, 0)] * (img.ndim - 2) + [(kh // 2, kh // 2), (kw // 2, kw // 2)]
    padded = np.pad(img, pad, mode="reflect")
    gy, gx = gaussian_kernel1d(kh, sigma), gaussian_kernel1d(kw, sigma)
    rows = sum(gx[j] * padded[..., :, j:j + w] for j in range(kw))
    out = sum(gy[i] * rows[..., i:i + h, :] for i in range(kh))
    return out.astype(np.float32)


def apply_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    """Blend each image towards the mean of its luminance-weighted grayscale.

    Works on (C, H, W) or (N, C, H, W) with C in {1, 3}.
    """
    if not 0.0 <= factor <= 1.0:
        raise ConfigurationError(f"contrast factor must be in [0, 1], got {factor}")
    img = np.asarray(img, dtype=np.float64)
    c = img.shape[-3]
    if c == 3:
        gray = np.tensordot(LUMA, img, axes=([0], [-3]))
    elif c == 1:
        gray = img[..., 0, :, :]
    else:
        raise ConfigurationError(f"contrast needs 1 or 3 channels, got {c}")
    m = gray.mean(axis=(-2, -1))[..., None, None, None]
    return np.clip(m + factor * (img - m), 0.0, 1.0).astype(np.float32)


def apply_input_fault(img: np.ndarray, spec: FaultSpec, config: FaultConfig) -> np.ndarray:
    if spec.fault_class not in INPUT_FAULTS:
        raise ConfigurationError(f"{spec.fault_class!r} is not an input fault")
    value = config.magnitude_value(spec.fault_class, spec.magnitude)
    if spec.fault_class == "noise":
        return apply_gaussian_noise(img, value, spec.seed, config.noise_scale)
    if spec.fault_class == "blur":
        return apply_gaussian_blur(img, value)
    return apply_contrast(img, value)


# ----------------------------------------------------------------------------
# Bit flips
# ----------------------------------------------------------------------------


def flip_bit(value, bit: int):
    """Flip bit ``bit`` (0 = mantissa LSB, 31 = sign) of a binary32 value or array."""
    if not 0 <= bit <= 31:
        raise ConfigurationError(f"bit index must be in [0, 31], got {bit}")
    arr = np.array(value, dtype=np.float32)
    flipped = (arr.view(np.uint32) ^ np.uint32(1 << bit)).view(np.float32)
    return flipped[()] if flipped.ndim == 0 else flipped


def _check_coord(coord: Sequence[int], shape: Sequence[int], what: str) -> tuple[int, ...]:
    coord = tuple(int(c) for c in coord)
    if len(coord) != len(shape) or any(not 0 <= c < s for c, s in zip(coord, shape)):
        raise ConfigurationError(f"{what} coordinate {coord} outside shape {tuple(shape)}")
    return coord


class WeightPatch:
    """Reversible single-bit flip of one convolution weight.

    ``apply()`` toggles the bit, so applying twice restores the original.
    Also usable as a context manager (flip on enter, restore on exit).
    """

    def __init__(self, net: Network, spec: FaultSpec):
        if spec.fault_class != "memory" or spec.target != "weight":
            raise ConfigurationError("WeightPatch needs a memory fault targeting a weight")
        if not 1 <= spec.layer <= net.n_monitored:
            raise ConfigurationError(f"layer {spec.layer} outside 1..{net.n_monitored}")
        self.weight = net.conv(spec.layer).weight
        self.coord = _check_coord(spec.coord, self.weight.shape, "weight")
        self.bit = spec.bit
        self.applied = False

    def apply(self) -> None:
        self.weight[self.coord] = flip_bit(self.weight[self.coord], self.bit)
        self.applied = not self.applied

    def __enter__(self):
        self.apply()
        return self

    def __exit__(self, *exc):
        if self.applied:
            self.apply()


def inject_weight_fault(net: Network, spec: FaultSpec) -> WeightPatch:
    return WeightPatch(net, spec)


class NeuronFault:
    """Forward hook flipping one element of a convolution output in place.

    Register it before any monitor hook so the monitor and the downstream
    layers both see the corrupted buffer. Sample index 0 is targeted unless
    ``sample`` says otherwise.
    """

    def __init__(self, spec: FaultSpec, shape: Sequence[int] | None = None, sample: int = 0):
        if spec.fault_class != "memory" or spec.target != "neuron":
            raise ConfigurationError("NeuronFault needs a memory fault targeting a neuron")
        self.layer = spec.layer
        self.coord = tuple(spec.coord)
        if shape is not None:
            _check_coord(self.coord, shape, "neuron")
        self.bit = spec.bit
        self.sample = sample

    def __call__(self, l: int, out: np.ndarray) -> None:
        if l != self.layer:
            return
        idx = (self.sample,) + _check_coord(self.coord, out.shape[1:], "neuron")
        out[idx] = flip_bit(out[idx], self.bit)


def inject_neuron_fault(spec: FaultSpec, net: Network | None = None) -> NeuronFault:
    shape = net.conv_output_shape(spec.layer) if net is not None else None
    return NeuronFault(spec, shape)


# ----------------------------------------------------------------------------
# Sampling
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class FaultSpace:
    """Per-convolution weight and output shapes of a network."""

    weight_shapes: tuple[tuple[int, ...], ...]
    output_shapes: tuple[tuple[int, ...], ...]

    @classmethod
    def of(cls, net: Network) -> FaultSpace:
        L = net.n_monitored
        return cls(tuple(net.conv(l).weight.shape for l in range(1, L + 1)),
                   tuple(net.conv_output_shape(l) for l in range(1, L + 1)))

    @property
    def n_layers(self) -> int:
        return len(self.weight_shapes)


def sample_fault_spec(config: FaultConfig, space: FaultSpace, rng: np.random.Generator) -> FaultSpec:
    """Draw one fault uniformly over the enabled classes, magnitudes and locations."""
    if not config.classes:
        raise ConfigurationError("no fault classes enabled")
    fault_class = config.classes[rng.integers(len(config.classes))]
    seed = int(rng.integers(0, 2**63))
    if fault_class == "none":
        return FaultSpec("none", seed=seed)
    if fault_class in INPUT_FAULTS:
        if not config.magnitudes:
            raise ConfigurationError("no magnitudes enabled")
        magnitude = config.magnitudes[rng.integers(len(config.magnitudes))]
        return FaultSpec(fault_class, magnitude=magnitude, seed=seed)
    if not config.targets:
        raise ConfigurationError("no memory fault targets enabled")
    target = config.targets[rng.integers(len(config.targets))]
    layer = int(rng.integers(space.n_layers)) + 1
    shapes = space.weight_shapes if target == "weight" else space.output_shapes
    coord = tuple(int(rng.integers(s)) for s in shapes[layer - 1])
    if config.accelerated:
        bit = ACCELERATED_BITS[rng.integers(len(ACCELERATED_BITS))]
    else:
        bit = int(rng.integers(32))
    return FaultSpec("memory", target=target, layer=layer, coord=coord, bit=int(bit),
                     accelerated=config.accelerated, seed=seed)
