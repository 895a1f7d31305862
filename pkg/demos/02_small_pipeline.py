"""
A small end-to-end run
======================

Data, desk CNN, fault campaign, detector, feature reduction and the minimal
search at toy scale (a few seconds instead of minutes). The default
configuration runs the same stages with 100 images x 100 injections plus
500 accelerated epochs; ``quantmon run`` does that from the shell.

Run with ``python demos/02_small_pipeline.py``.
"""

import tempfile

import numpy as np

from quantmon.detector import export_text
from quantmon.harness.config import CampaignConfig
from quantmon.harness.experiment import run_campaign_stage, train_network
from quantmon.harness.pipeline import train_eval_pipeline
from quantmon.monitor import feature_name

out = tempfile.mkdtemp(prefix="quantmon-demo-")
config = CampaignConfig(n_images=12, fis_per_image=40, accelerated_epochs=40, n_train=2000, n_test=200,
                        train_epochs=2, n_reseeds=3, out_dir=out)

# %% The monitored model
# Four convolutions, each watched by the quantile monitor. Training uses the
# synthetic shapes data written (as IDX files) under the output directory.
net, acc = train_network(config)
print(f"desk CNN: {net.n_parameters()} parameters, test accuracy {acc:.3f}")

# %% The campaign
# Per image: one fault-free reference, random faults from every class, then
# accelerated memory faults restricted to exponent bits 28..30.
table = run_campaign_stage(config)
print("records:", len(table), table.outcome_counts())
# Accelerated epochs only draw memory faults, so compare like with like.
memory = table.fault_class == "memory"
for kind in ("random", "accelerated"):
    sel = memory & (table.kind == kind)
    print(f"  {kind:11s} memory-fault SDC rate {np.mean(table.outcome[sel] == 'sdc'):.3f}")
sdc = table.outcome == "sdc"
print("  SDC labels:", dict(zip(*np.unique(table.label[sdc], return_counts=True))))

# %% Detectors over reseeded splits
# Each seed draws a new image-level split and bounds subset, fits the full
# tree (alpha picked on held-out training images) and reduces it.
result = train_eval_pipeline(table, config)
for row in result.summary_rows():
    metrics = " ".join(f"{m}={row[m]:.3f}" for m in ("P_cls", "P_cat", "P_sdc", "R_cls", "R_cat", "R_sdc"))
    print(f"{row['model']:5s} {metrics}  N_ft/N_l={row['N_ft/N_l']}")

# %% What the reduced detector looks at
L = result.n_layers
first = result.runs[0]
print("seed 0 reduced features:", [feature_name(f, L) for f in first.reduced.features])
print(export_text(first.reduced.tree, L))

# %% Alternative minimal feature sets
for cand in result.pool.candidates:
    print("pool:", [feature_name(f, L) for f in cand.features],
          f"P_cls={cand.report.precision['cls']:.3f} R_cls={cand.report.recall['cls']:.3f}")
print("report files could be written with quantmon.harness.report.emit_report(result, out)")
