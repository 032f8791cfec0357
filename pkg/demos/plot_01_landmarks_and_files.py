"""
Landmarks, CSV files and MHA containers
=======================================

Landmark sets, the two-annotator average, and the file formats that carry
images and points between pipeline stages.
"""

import os
import tempfile

import numpy as np

from cephalo import LandmarkSet, merge_annotations, read_landmark_csv, write_landmark_csv
from cephalo.mha import header_for, pack_to_common_canvas, read_mha, write_mha
from cephalo.synth import synth_dataset

###############################################################################
# A landmark set holds K points as (x, y) = (column, row). NaN marks a point
# that is not visible; equality ignores those slots.
partial = LandmarkSet([[10.0, 10.0], [np.nan, np.nan]], [True, False])
print(partial.k, partial.visible)
print(partial == LandmarkSet([[10.0, 10.0], [5.0, 5.0]], [True, False]))

# Ground truth is the mean of the two annotators, point by point. Both must
# mark every landmark.
first = LandmarkSet([[10.0, 10.0], [20.0, 5.0], [30.0, 28.0]])
second = LandmarkSet([[12.0, 14.0], [20.0, 7.0], [30.0, 30.0]])
gt = merge_annotations(first, second)
print(gt.points)

###############################################################################
# CSV round trip: six decimals, sorted rows, invisible points left out
tmp = tempfile.mkdtemp()
path = os.path.join(tmp, "gt.csv")
write_landmark_csv({"img001": gt}, path)
print(open(path).read())
assert read_landmark_csv(path, 3)["img001"] == gt

###############################################################################
# MHA is an ASCII header plus a raw payload. A USHORT image round trips
# bit for bit.
raw = np.random.default_rng(0).integers(0, 4096, size=(24, 32)).astype(np.uint16)
write_mha(header_for(raw, (0.1, 0.1)), raw, os.path.join(tmp, "img.mha"))
header, back = read_mha(os.path.join(tmp, "img.mha"))
print(header.element_type, header.dim_size, np.array_equal(back, raw))

###############################################################################
# Images from different sites have different extents; packing pads them to
# a shared canvas anchored at the top-left corner.
records, _ = synth_dataset(3, 4, seed=0)
for rec in records:
    print(rec.meta.image_id, rec.meta.institution, rec.pixels.shape)
canvas, offsets = pack_to_common_canvas(records)
print("canvas", canvas.shape, offsets)
