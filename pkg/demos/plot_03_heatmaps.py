"""
Heatmap encoding and decoding
=============================

A landmark becomes a Gaussian bump on a model-resolution grid. Decoding
takes the argmax and nudges it a quarter pixel toward the larger
neighbour.
"""

import numpy as np

from cephalo import LandmarkSet, decode, decode_to_native, encode

points = LandmarkSet([[20.0, 12.0], [33.4, 8.7]])
stack = encode(points, 48, 32, sigma=2.0)
print(stack.channels.shape, stack.resolution)

###############################################################################
# On-grid points come back exactly; sub-pixel ones within three quarters of
# a pixel on each axis.
back = decode(stack)
print(back.points)
print("confidence is the raw peak value:", back.confidence)

###############################################################################
# A 256x256 model output maps back to native pixels by scaling each axis.
big = encode(LandmarkSet([[128.0, 128.0]]), 256, 256)
print(decode_to_native(big, 2304, 2880).points)

###############################################################################
# Ties keep the first maximum in scan order: a flat map decodes to (0, 0).
flat = encode(LandmarkSet([[0.0, 0.0]]), 4, 4, sigma=1e3)
flat.channels[:] = 1.0
print(decode(flat).points)
assert np.array_equal(decode(flat).points, [[0.0, 0.0]])
