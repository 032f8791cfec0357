"""
Augmentation with exact landmark tracking
=========================================

Every transform maps the image and the landmarks together. Composing
steps into a chain composes both maps.
"""

import numpy as np

from cephalo import LandmarkSet, TransformChain, apply_chain
from cephalo.transforms import Brightness, Pad, Resize, Rotate, policy_for_augmentation, sample_policy

rng = np.random.default_rng(3)
h, w = 60, 80
image = np.zeros((h, w))
image[20, 30] = 1.0
landmarks = LandmarkSet([[30.0, 20.0]])

###############################################################################
# Pad, rotate about the image centre, then resize to a square model input
chain = TransformChain([Pad(10), Rotate(15.0), Resize(64, 64), Brightness(1.2)])
out, moved = apply_chain(chain, image, landmarks)
print("output shape", out.shape)
print("mapped landmark", moved.points[0])

# The analytic map agrees with where the resampled impulse ended up
r, c = np.unravel_index(out.argmax(), out.shape)
print("brightest pixel (x, y)", (c, r))

###############################################################################
# Policies: each ensemble member samples its own chain per image. The
# shift/crop policy for one member, drawn three times:
policy = policy_for_augmentation("shift_crop")
for _ in range(3):
    print(sample_policy(policy, rng, (h, w)).to_dict())

###############################################################################
# Chains are plain data, so they can be saved next to the outputs they made.
print(chain.to_dict())
