"""
The full pipeline through the command line
==========================================

``cephalo`` chains the stages over a working directory. The same calls are
made here through ``cli.main``.
"""

import json
import os
import tempfile

from cephalo import cli

out = os.path.join(tempfile.mkdtemp(), "run")
res = ["--resolutions", "96,128,160,192,224"]

###############################################################################
# Synthetic dataset, template members, fusion, evaluation
cli.main(["synth", "--out", out, "--n-images", "24", "--seed", "0"])
cli.main(["predict", "--out", out, "--backend", "template", *res])
cli.main(["fuse", "--out", out, *res])
cli.main(["report", "--out", out, "--split", "all", *res])

print(sorted(os.listdir(os.path.join(out, "predictions"))))
with open(os.path.join(out, "results.json")) as fh:
    print(json.load(fh)["fused"]["sdr_percent"])

###############################################################################
# The Monte Carlo study writes a table and a chart of its own
cli.main(["simulate", "--out", out, "--trials", "100"])
