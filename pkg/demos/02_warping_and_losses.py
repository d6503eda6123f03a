"""
Reprojection and the photometric landscape
==========================================

Each synthetic sample carries its neighbouring frames and their poses. Warping
a neighbour into the target view with the true depth should reproduce the
target image; scaling the depth away from the truth should make the
photometric error grow. Sparse and smoothness terms are shown alongside.
"""

import numpy as np

from protoadapt.geometry import warp_image
from protoadapt.losses import photometric_loss, smoothness_loss, sparse_consistency_loss
from protoadapt.synth import INDOOR, in_memory
from protoadapt.tensor import Tensor

sample = in_memory(INDOOR, 1)[0]
print("image", sample.image.shape, "sparse points", int(sample.mask.sum()),
      f"depth range {sample.gt.min():.2f}..{sample.gt.max():.2f} m")


def photometric_at(depth):
    views = [warp_image(img, Tensor(depth.astype(np.float32)), pose, sample.K) for img, pose in sample.adjacent]
    return photometric_loss(sample.image, views).loss.item()


# Scan a global depth scale: the minimum sits at the true depth.
for scale in (0.8, 0.9, 0.95, 1.0, 1.05, 1.1, 1.25):
    print(f"depth x{scale:<5} photometric {photometric_at(sample.gt * scale):.4f}")

# The sparse term only looks at measured pixels; smoothness only at gradients
# that do not coincide with image edges.
flat = Tensor(np.full(sample.gt.shape, sample.gt.mean(), dtype=np.float32))
print("sparse term, true depth:", sparse_consistency_loss(Tensor(sample.gt.astype(np.float32)), sample.sparse_z, sample.mask).item())
print("sparse term, flat depth:", round(sparse_consistency_loss(flat, sample.sparse_z, sample.mask).item(), 6))
print("smoothness, true depth :", round(smoothness_loss(Tensor(sample.gt.astype(np.float32)), sample.image).item(), 6))
print("smoothness, flat depth :", smoothness_loss(flat, sample.image).item())
