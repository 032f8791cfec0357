"""
Predictor backends
==================

The model seat is pluggable. Here the template matcher is trained on a
synthetic dataset and compared with the noisy oracle.
"""

import numpy as np

from cephalo import default_ensemble, oracle_predict, predict
from cephalo.metrics import radial_error
from cephalo.predictors import TemplateBackend, template_train
from cephalo.synth import synth_dataset

records, manifest = synth_dataset(12, 6, seed=1)
train = [(rec, e.landmarks) for rec, e in zip(records, manifest.entries) if e.split == "train"]
held = [(rec, e.landmarks) for rec, e in zip(records, manifest.entries) if e.split != "train"]

###############################################################################
# The default roster has seven members over five pyramid levels. At desk
# scale the levels are remapped onto smaller sizes.
ensemble = default_ensemble("template", resolutions=[96, 128, 160, 192, 224])
for spec in ensemble.members:
    print(spec.tag, spec.resolution, spec.augmentation)

###############################################################################
# One template bank per member: mean patch and mean position per landmark
spec = ensemble.members[4]
backend = TemplateBackend({spec.tag: template_train(train, spec)})
for rec, gt in held:
    pred = predict(spec, rec, backend)
    err = [radial_error(p, g, rec.meta.spacing_mm_per_px) for p, g in zip(pred.points, gt.points)]
    print(rec.meta.image_id, "max error %.3f mm" % max(err))

###############################################################################
# The oracle is ground truth plus Gaussian noise. In informative mode the
# confidence falls as the error grows.
rng = np.random.default_rng(0)
noisy = oracle_predict(held[0][1], 2.0, "informative", rng)
err = np.hypot(*(noisy.points - held[0][1].points).T)
for e, c in sorted(zip(err, noisy.confidence)):
    print("error %.2f px  confidence %.3f" % (e, c))
