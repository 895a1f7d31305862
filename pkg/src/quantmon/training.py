"""Desk-scale model definition and a plain minibatch SGD fit.

Training uses an im2col formulation through BLAS for speed. It is not the
bit-exact inference path; only the final float32 weights are kept.
"""

from __future__ import annotations

import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .netio import parse_network_config
from .tensor_net import Conv2d, Linear, MaxPool2d, Network, ReLU

logger = logging.getLogger(__name__)

DESK_CONFIG = """\
input {c} 28 28
conv2d 8 3 stride=1 padding=1
relu
maxpool2d 2 stride=2
conv2d 16 3 stride=1 padding=1
relu
conv2d 16 3 stride=1 padding=1
relu
maxpool2d 2 stride=2
conv2d 32 3 stride=1 padding=1
relu
linear 64
relu
linear 10
"""


def desk_network(channels: int = 1, seed: int = 0) -> Network:
    """The 4-conv-layer CNN used for desk-scale experiments (about 110k parameters)."""
    return parse_network_config(DESK_CONFIG.format(c=channels), seed=seed)


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]  # (N, C, OH, OW, kh, kw)


class _ConvOp:
    def __init__(self, layer: Conv2d):
        self.layer = layer

    def forward(self, x):
        L = self.layer
        p, s = L.padding, L.stride
        kh, kw = L.weight.shape[2:]
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = _windows(xp, kh, kw, s)
        n, c, oh, ow = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
        out = cols @ L.weight.reshape(L.out_channels, -1).T + L.bias
        self.cache = (x.shape, xp.shape, cols, oh, ow)
        return out.reshape(n, oh, ow, -1).transpose(0, 3, 1, 2)

    def backward(self, dout):
        L = self.layer
        x_shape, xp_shape, cols, oh, ow = self.cache
        n, c = x_shape[:2]
        kh, kw = L.weight.shape[2:]
        s, p = L.stride, L.padding
        d = dout.transpose(0, 2, 3, 1).reshape(-1, L.out_channels)
        grads = (d.T @ cols).reshape(L.weight.shape), d.sum(axis=0)
        dcols = (d @ L.weight.reshape(L.out_channels, -1)).reshape(n, oh, ow, c, kh, kw)
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, p:p + x_shape[2], p:p + x_shape[3]]
        return dx, grads


class _PoolOp:
    def __init__(self, layer: MaxPool2d):
        self.layer = layer

    def forward(self, x):
        k, s = self.layer.window, self.layer.stride
        win = _windows(x, k, k, s)
        n, c, oh, ow = win.shape[:4]
        flat = win.reshape(n, c, oh, ow, k * k)
        arg = flat.argmax(axis=-1)
        self.cache = (x.shape, arg, oh, ow)
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        k, s = self.layer.window, self.layer.stride
        x_shape, arg, oh, ow = self.cache
        dx = np.zeros(x_shape, dtype=dout.dtype)
        di, dj = np.divmod(arg, k)
        nn, cc, yy, xx = np.indices(arg.shape)
        np.add.at(dx, (nn, cc, yy * s + di, xx * s + dj), dout)
        return dx, None


class _ReluOp:
    def forward(self, x):
        self.mask = x > 0
        return x * self.mask

    def backward(self, dout):
        return dout * self.mask, None


class _LinearOp:
    def __init__(self, layer: Linear):
        self.layer = layer

    def forward(self, x):
        self.shape = x.shape
        self.x = x.reshape(x.shape[0], -1)
        return self.x @ self.layer.weight.T + self.layer.bias

    def backward(self, dout):
        grads = dout.T @ self.x, dout.sum(axis=0)
        return (dout @ self.layer.weight).reshape(self.shape), grads


def _ops(net: Network):
    ops = []
    for layer in net.layers:
        if isinstance(layer, Conv2d):
            ops.append(_ConvOp(layer))
        elif isinstance(layer, MaxPool2d):
            ops.append(_PoolOp(layer))
        elif isinstance(layer, Linear):
            ops.append(_LinearOp(layer))
        elif isinstance(layer, ReLU):
            ops.append(_ReluOp())
    return ops


def fit_sgd(
    net: Network,
    images: np.ndarray,
    labels: np.ndarray,
    epochs: int = 6,
    lr: float = 0.05,
    momentum: float = 0.9,
    batch_size: int = 64,
    weight_decay: float = 1e-4,
    seed: int = 0,
) -> Network:
    """Train ``net`` in place with softmax cross-entropy and momentum SGD.

    The learning rate follows a cosine decay over all steps. Returns ``net``.
    """
    rng = np.random.default_rng(seed)
    ops = _ops(net)
    params = [(layer, name) for layer in net.layers if isinstance(layer, (Conv2d, Linear))
              for name in ("weight", "bias")]
    velocity = {(id(layer), name): np.zeros_like(getattr(layer, name)) for layer, name in params}
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    n = len(images)
    steps = epochs * ((n + batch_size - 1) // batch_size)
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            x, y = images[idx], labels[idx]
            for op in ops:
                x = op.forward(x)
            z = x - x.max(axis=1, keepdims=True)
            prob = np.exp(z)
            prob /= prob.sum(axis=1, keepdims=True)
            total_loss += -np.log(prob[np.arange(len(y)), y] + 1e-12).sum()
            grad = prob
            grad[np.arange(len(y)), y] -= 1.0
            grad /= len(y)
            rate = lr * 0.5 * (1.0 + np.cos(np.pi * step / steps))
            for op in reversed(ops):
                grad, g = op.backward(grad)
                if g is None:
                    continue
                for name, gv in zip(("weight", "bias"), g):
                    param = getattr(op.layer, name)
                    if name == "weight":
                        gv = gv + weight_decay * param
                    v = velocity[(id(op.layer), name)]
                    v *= momentum
                    v -= rate * gv.astype(np.float32)
                    param += v
            step += 1
        logger.info("epoch %d: mean loss %.4f", epoch + 1, total_loss / n)
    return net
