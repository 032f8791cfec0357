"""
Radial error, MRE and SDR
=========================

Errors are measured in millimetres with each image's own pixel spacing.
"""

import os
import tempfile

import numpy as np

from cephalo import evaluate, mre, radial_error, report_tables, sdr
from cephalo.core import LandmarkSet
from cephalo.metrics import plot_per_landmark
from cephalo.synth import synth_dataset

print(radial_error((13, 14), (10, 10), 0.1))
print(mre([0.5, 1.5]), sdr([1.9, 2.0, 2.1], 2.0))

###############################################################################
# Evaluate two made-up models on a synthetic manifest
_, manifest = synth_dataset(16, 5, seed=2)
gt = manifest.ground_truth("all")
rng = np.random.default_rng(0)
results = {}
for tag, sigma in (("coarse", 15.0), ("fine", 5.0)):
    preds = {iid: LandmarkSet(ls.points + rng.normal(0, sigma, ls.points.shape)) for iid, ls in gt.items()}
    results[tag] = evaluate(preds, manifest, split="all")

print(report_tables(results, title="Synthetic comparison"))

###############################################################################
# Per-landmark MRE as an SVG chart, one series per model
out = os.path.join(tempfile.mkdtemp(), "per_landmark.svg")
plot_per_landmark(results, out)
print(out, os.path.getsize(out), "bytes")
