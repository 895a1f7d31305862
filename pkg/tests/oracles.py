"""Brute-force reference implementations used only by the tests.

They loop over scalars one at a time in the documented accumulation order
(binary32 products and sums, bias added last), so a match against the
vectorized kernels is a bit-for-bit comparison.
"""

from __future__ import annotations

import math
from itertools import product

import numpy as np

F32 = np.float32


def conv2d_oracle(x, w, b, stride, pad):
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.empty((n, co, oh, ow), dtype=np.float32)
    for s, o, y, xx in product(range(n), range(co), range(oh), range(ow)):
        acc = F32(0.0)
        for c, i, j in product(range(ci), range(kh), range(kw)):
            iy, ix = y * stride + i - pad, xx * stride + j - pad
            v = x[s, c, iy, ix] if 0 <= iy < h and 0 <= ix < wd else F32(0.0)
            acc = F32(acc + F32(v * w[o, c, i, j]))
        out[s, o, y, xx] = F32(acc + b[o])
    return out


def maxpool2d_oracle(x, window, stride):
    n, c, h, wd = x.shape
    oh, ow = (h - window) // stride + 1, (wd - window) // stride + 1
    out = np.empty((n, c, oh, ow), dtype=np.float32)
    for s, ch, y, xx in product(range(n), range(c), range(oh), range(ow)):
        vals = [x[s, ch, y * stride + i, xx * stride + j] for i in range(window) for j in range(window)]
        out[s, ch, y, xx] = next((v for v in vals if math.isnan(v)), max(vals))
    return out


def linear_oracle(x, w, b):
    x = x.reshape(x.shape[0], -1)
    out = np.empty((x.shape[0], w.shape[0]), dtype=np.float32)
    for s, o in product(range(x.shape[0]), range(w.shape[0])):
        acc = F32(0.0)
        for i in range(x.shape[1]):
            acc = F32(acc + F32(w[o, i] * x[s, i]))
        out[s, o] = F32(acc + b[o])
    return out


def quantile_oracle(values, p):
    """Linear-interpolation quantile of a list, computed with Python floats."""
    s = sorted(float(v) for v in values)
    pos = (len(s) - 1) * p / 100.0
    j = math.floor(pos)
    g = pos - j
    if g == 0.0:
        return s[j]
    return s[j] + g * (s[j + 1] - s[j])


def feature_sum_oracle(fmap):
    return float(np.float64(np.asarray(fmap, dtype=np.float64).sum()))


def best_root_split(X, y):
    """Exhaustive weighted-Gini search over every feature and midpoint.

    Class weights are balanced, ``N / (K * N_k)``. Returns
    ``(gain, feature, threshold)`` with the same tie rule as the library:
    lowest feature, then lowest threshold, among splits within a relative
    tolerance of the best gain.
    """
    classes = sorted(set(y))
    n, k = len(y), len(classes)
    weight = {c: n / (k * sum(1 for v in y if v == c)) for c in classes}

    def impurity(rows):
        m = [sum(weight[y[r]] for r in rows if y[r] == c) for c in classes]
        tot = sum(m)
        return tot, (1.0 - sum((v / tot) ** 2 for v in m)) if tot > 0 else 0.0

    all_rows = range(n)
    total, parent = impurity(all_rows)
    options = []
    for f in range(len(X[0])):
        vals = sorted(set(X[r][f] for r in all_rows))
        for lo, hi in zip(vals, vals[1:]):
            thr = (lo + hi) / 2.0
            if not lo < thr < hi:
                thr = lo
            left = [r for r in all_rows if X[r][f] <= thr]
            right = [r for r in all_rows if X[r][f] > thr]
            ml, gl = impurity(left)
            mr, gr = impurity(right)
            gain = total * parent - ml * gl - mr * gr
            options.append((gain, f, thr))
    if not options:
        return None
    best = max(o[0] for o in options)
    tol = 1e-10 * total
    return min((o for o in options if o[0] >= best - tol), key=lambda o: (o[1], o[2]))
