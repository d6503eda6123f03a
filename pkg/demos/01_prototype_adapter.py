"""
Prototype adapters on a latent feature map
==========================================

A prototype set rescales a frozen feature map channel-wise (the global
prototype A) and adds a bias that every pixel queries from a small pool of
local prototypes P. Keys come from P through a projection W, with P detached
on that path so that P is shaped only by what it contributes as a value.
"""

import numpy as np

from protoadapt import tensor as T
from protoadapt.backbone import LatentTap, Modality
from protoadapt.prototypes import PrototypeSet, local_bias, project_keys
from protoadapt.tensor import Tensor

rng = np.random.default_rng(0)
tap = LatentTap("bottleneck", 8, Modality.FUSED)
X = Tensor(rng.normal(size=(1, 4, 6, 8)).astype(np.float32))

# A fresh set is an exact identity: A is all ones and P all zeros, so a new
# domain can be attached without moving any prediction.
fresh = PrototypeSet(tap, domain_id=2, n=5, rng=rng)
print("fresh set is identity:", np.array_equal(fresh.adapt(X).data, X.data))

# Give the local prototypes some content and look at the attention weights a
# single pixel spreads over them.
fresh.P.data = rng.normal(size=fresh.P.shape).astype(np.float32)
q = X.data[0, 0, 0]
scores = fresh.keys().data @ q / np.sqrt(8)
alpha = np.exp(scores - scores.max())
alpha /= alpha.sum()
print("attention of pixel (0, 0) over 5 prototypes:", np.round(alpha, 3))
print("its bias equals alpha @ P:", np.allclose(fresh.bias(X).data[0, 0, 0], alpha @ fresh.P.data, atol=1e-6))

# Stop-gradient on the key path: forward values are the same either way, but
# P only receives gradient through the value path when the keys are detached.
P = Tensor(fresh.P.data.copy(), requires_grad=True)
W = Tensor(fresh.W.data.copy())
for stop in (True, False):
    P.grad = None
    out = local_bias(X[0], P, project_keys(P, W, stop_grad=stop))
    T.reduce_sum(out * out).backward()
    print(f"stop_grad={stop}: |dL/dP| = {np.abs(P.grad).sum():.4f}")
