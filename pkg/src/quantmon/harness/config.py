"""Experiment configuration and its plain-text ``key = value`` file format.

Lines starting with ``#`` are comments; sequence values are comma-separated::

    n_images = 100
    fault_classes = noise, blur, contrast, memory
    contrast_factors = 0.8, 0.4, 0.1
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path
from typing import get_type_hints

from ..corruption import FaultConfig
from ..errors import ConfigurationError

OUT_DIR_ENV = "QUANTMON_OUT"


@dataclass
class CampaignConfig:
    # campaign sizing
    n_images: int = 100
    fis_per_image: int = 100
    accelerated_epochs: int = 500
    fault_classes: tuple[str, ...] = ("noise", "blur", "contrast", "memory")
    magnitudes: tuple[str, ...] = ("low", "med", "high")
    memory_targets: tuple[str, ...] = ("weight", "neuron")
    accelerated_targets: tuple[str, ...] = ("weight", "neuron")
    noise_sigmas: tuple[float, ...] = (0.1, 1.0, 10.0)
    noise_scale: float = 1.0 / 255.0
    blur_sigmas: tuple[float, ...] = (0.3, 1.0, 3.0)
    contrast_factors: tuple[float, ...] = (0.8, 0.4, 0.1)
    seed: int = 0
    # detector data
    split_ratio: float = 2.0
    bounds_fraction: float = 0.2
    balance_ratio: float = 2.0
    validation_fraction: float = 0.25
    ccp_alphas: tuple[float, ...] = (1.0e-5, 1.25e-5, 1.5e-5, 1.75e-5, 2.0e-5)
    n_reseeds: int = 10
    # reduction
    retention: float = 0.95
    retention_mode: str = "cls"
    reduction_max_k: int = 0  # 0: try every feature
    search_depth: int = 24
    search_depth_unit: str = "rounds"
    search_max_k: int = 8
    # desk model and data
    n_train: int = 6000
    n_test: int = 1000
    channels: int = 1
    data_seed: int = 1
    net_seed: int = 0
    train_epochs: int = 4
    min_test_accuracy: float = 0.95
    # paths
    data_dir: str = "data"
    network_path: str = "network.qsnt"
    out_dir: str = "out"

    def __post_init__(self):
        if self.split_ratio <= 0 or not 0 < self.bounds_fraction <= 1:
            raise ConfigurationError("split_ratio must be > 0 and bounds_fraction in (0, 1]")
        if self.retention_mode not in ("cls", "cat", "sdc"):
            raise ConfigurationError(f"retention_mode must be cls/cat/sdc, got {self.retention_mode!r}")
        if self.n_images < 1 or self.fis_per_image < 0 or self.accelerated_epochs < 0:
            raise ConfigurationError("campaign sizes must be non-negative (and at least one image)")

    def fault_config(self, accelerated: bool = False, target: str | None = None) -> FaultConfig:
        return FaultConfig(
            classes=("memory",) if accelerated else self.fault_classes,
            magnitudes=self.magnitudes,
            targets=(target,) if target else self.memory_targets,
            accelerated=accelerated,
            noise_sigmas=self.noise_sigmas,
            noise_scale=self.noise_scale,
            blur_sigmas=self.blur_sigmas,
            contrast_factors=self.contrast_factors,
        )

    def output_dir(self) -> Path:
        return Path(os.environ.get(OUT_DIR_ENV) or self.out_dir)


def _convert(text: str, hint) -> object:
    text = text.strip()
    hint = str(hint)
    if hint.startswith("tuple"):
        item = float if "float" in hint else str
        return tuple(item(v.strip()) for v in text.split(",") if v.strip())
    if hint == "<class 'int'>" or hint == "int":
        return int(text)
    if hint == "<class 'float'>" or hint == "float":
        return float(text)
    return text


def parse_config(text: str, **overrides) -> CampaignConfig:
    hints = get_type_hints(CampaignConfig)
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in hints:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(value, hints[key])
        except ValueError as exc:
            raise ConfigurationError(f"config line {lineno}: {exc}") from exc
    values.update(overrides)
    return CampaignConfig(**values)


def load_config(path: str | Path | None, **overrides) -> CampaignConfig:
    if path is None:
        return CampaignConfig(**overrides)
    return parse_config(Path(path).read_text(), **overrides)


def format_config(config: CampaignConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
