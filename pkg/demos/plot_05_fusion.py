"""
Drop-lowest fusion
==================

For each landmark the member confidences go through a softmax, the least
confident prediction is discarded and the rest are averaged.
"""

import numpy as np

from cephalo import fuse_landmark, softmax
from cephalo.simulate import noise_profile, simulate

print(softmax([1.0, 2.0, 3.0]))

point, conf = fuse_landmark([(0, 0), (10, 0), (20, 0)], [0.1, 0.2, 0.7])
print(point, conf)

###############################################################################
# Ties on the minimum drop the earliest member
print(fuse_landmark([(0, 0), (3, 0), (6, 0)], [0.5, 0.5, 0.5]))

###############################################################################
# Monte Carlo: seven oracle members with their own noise levels. The fused
# error sits well below the average member.
sigmas = noise_profile("uniform", 7, 38, seed=0)
res = simulate(200, sigmas, seed=0)
for s, m in zip(sigmas[:, 0], res.member_mre):
    print("sigma %.2f px  MRE %.3f mm" % (s, m))
print("fused MRE %.3f mm" % res.fused_mre)

###############################################################################
# When confidence says nothing about the error the drop is a coin toss, and
# six equal members average down by about sqrt(6).
equal = noise_profile("equal", 7, 38, seed=0, low=2.0)
blind = simulate(200, equal, seed=0, mode="uninformative")
print("ratio to single/sqrt(6): %.3f" % (blind.fused_mre / (blind.member_mre.mean() / np.sqrt(6))))
