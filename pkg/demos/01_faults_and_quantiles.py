"""
Bit flips, quantile markers and anomaly features
================================================

A walk through the monitoring primitives on a small random CNN: what a
single exponent-bit flip does to a float32, how it shows up in the per-layer
quantile markers, and how those markers turn into anomaly features.

Run with ``python demos/01_faults_and_quantiles.py``.
"""

import numpy as np

from quantmon.corruption import FaultSpec, NeuronFault, apply_contrast, flip_bit
from quantmon.monitor import PERCENTILES, QuantileMonitor, anomaly_vector, extract_bounds, feature_name
from quantmon.netio import parse_network_config
from quantmon.tensor_net import forward, top1

# %% Bit flips in binary32
# Bit 31 is the sign, bits 30..23 the exponent. Every |x| < 2 has bit 30
# clear. Flipping it multiplies a value below 1 by 2**128 (huge but
# finite), while values in [1, 2) land on the all-ones exponent: 1.0 itself
# becomes Inf, anything with mantissa bits set becomes NaN. Bits 29..23 are
# set in 1.0, so flipping them shrinks it.
for bit in (31, 30, 29, 23, 0):
    print(f"flip_bit(1.0, {bit:2d}) = {float(flip_bit(1.0, bit))!r}")
print("flip_bit(0.1, 30) =", float(flip_bit(0.1, 30)))

# %% A small network
net = parse_network_config("""
input 1 16 16
conv2d 8 3 padding=1
relu
maxpool2d 2
conv2d 16 3 padding=1
relu
conv2d 16 3 stride=2 padding=1
relu
linear 4
""", seed=0)
rng = np.random.default_rng(0)
images = rng.random((40, 1, 16, 16), dtype=np.float32)
print("monitored layers:", net.n_monitored, "parameters:", net.n_parameters())

# %% Reference bounds
# Bounds are the per-(layer, percentile) envelope of the quantile markers
# over fault-free inputs.
bounds = extract_bounds(net, images[:30])
print("upper bounds of layer 2:", np.round(bounds.qmax[1], 2))

# %% A neuron fault in layer 2
# The flip hits one activation of the second convolution's output, before
# the monitor sees it. The activation (0.87) becomes about 3e38, so one
# channel sum explodes and the top marker of layer 2 jumps.
x = images[30:31]
clean = QuantileMonitor(net.n_monitored)
ref_logits = forward(net, x, [clean])
spec = FaultSpec("memory", target="neuron", layer=2, coord=(13, 6, 0), bit=30)
faulty = QuantileMonitor(net.n_monitored)
logits = forward(net, x, [NeuronFault(spec), faulty])
print("layer 2 markers, clean :", np.round(clean.quantiles[0, 1], 2))
print("layer 2 markers, faulty:", np.round(faulty.quantiles[0, 1], 2))
print("top-1 clean / faulty:", top1(ref_logits)[0], top1(logits)[0])

# %% Anomaly features
# Features sit in (0, 1); 0.5 means "exactly at the bound", larger values
# lie outside the fault-free envelope.
for name, mon in (("clean", clean), ("neuron fault", faulty)):
    v = anomaly_vector(mon.quantiles[0], bounds)
    k = int(np.argmax(v))
    print(f"{name:13s} max feature {v[k]:.3f} at {feature_name(k, net.n_monitored)}")

# %% An input corruption
# A strong contrast reduction shifts the bulk of every layer's markers
# instead of one peak.
low = QuantileMonitor(net.n_monitored)
forward(net, apply_contrast(x[0], 0.1)[None], [low])
v = anomaly_vector(low.quantiles[0], bounds).reshape(len(PERCENTILES), net.n_monitored)
print("contrast 0.1, features per percentile (rows) and layer (columns):")
print(np.round(v, 2))
