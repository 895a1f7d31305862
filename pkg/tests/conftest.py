import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from quantmon.netio import parse_network_config  # noqa: E402

ACCEPTANCE = pytest.StashKey[dict]()

TINY_CONFIG = """\
input 1 12 12
conv2d 4 3 stride=1 padding=1
relu
maxpool2d 2 stride=2
conv2d 6 3 stride=1 padding=1
relu
conv2d 8 3 stride=2 padding=1
relu
linear 5
"""


@pytest.fixture
def tiny_net():
    """Three-convolution network on 12x12 inputs with random weights."""
    net = parse_network_config(TINY_CONFIG, seed=3)
    rng = np.random.default_rng(7)
    for layer in net.layers:
        if hasattr(layer, "bias"):
            layer.bias[:] = rng.normal(0, 0.1, layer.bias.shape).astype(np.float32)
    return net


@pytest.fixture
def tiny_images():
    return np.random.default_rng(11).random((6, 1, 12, 12), dtype=np.float32)


def random_conv_case(rng: np.random.Generator):
    """A random small convolution problem: (x, w, b, stride, pad)."""
    n, ci, co = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.integers(1, 4))
    pad = int(rng.integers(0, k))
    h, w = rng.integers(k, 7), rng.integers(k, 7)
    stride = int(rng.integers(1, 3))
    x = rng.normal(size=(n, ci, h, w)).astype(np.float32)
    wt = rng.normal(size=(co, ci, k, k)).astype(np.float32)
    b = rng.normal(size=co).astype(np.float32)
    return x, wt, b, stride, pad


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's verdict for the end-of-run summary."""
    results = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str) -> bool:
        results[number] = (ok, detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
