"""
Domain descriptors and the repulsion weight
===========================================

Each new domain learns a descriptor pulled toward its own pooled bottleneck
features and pushed away from the frozen descriptors of earlier domains.
Pooled features of related domains share a large common component, so the
push can drive the new descriptor far from its own samples. The weight w_jk
on the push is a tunable constant; this script shows routing accuracy on two
overlapping clusters as that constant changes.
"""

import numpy as np

from protoadapt.router import DomainDescriptor, batch_descriptor_loss, fit_initial_descriptor, select_domain
from protoadapt.tensor import Tensor

rng = np.random.default_rng(0)
c = 32
common = np.abs(rng.normal(2.0, 0.5, size=c))
shift = np.zeros(c)
shift[:6] = 0.8


def domain(n, offset):
    return common + offset + rng.normal(0, 0.25, size=(n, c))


train1, train2 = domain(64, 0), domain(64, shift)
held1, held2 = domain(40, 0), domain(40, shift)
r1 = fit_initial_descriptor(train1, 1)
m2 = train2.mean(0)
print(f"cosine between the two domain means: {m2 @ r1.r.data / np.linalg.norm(m2):.3f}")

for scale in (0.5, 1.0, 2.0, 4.0, 16.0):
    r2 = DomainDescriptor(Tensor(train2[:8].mean(0).astype(np.float32), requires_grad=True), 2)
    for step in range(300):
        batch = train2[rng.integers(0, 64, 8)]
        r2.r.grad = None
        batch_descriptor_loss(batch, r2.r, [r1], scale).backward()
        r2.r.data = (r2.r.data - 0.5 * r2.r.grad).astype(np.float32)
    pick = [select_domain(s, [r1, r2]) for s in np.concatenate([held1, held2])]
    truth = [1] * 40 + [2] * 40
    acc = np.mean(np.array(pick) == truth)
    own = m2 @ r2.r.data / np.linalg.norm(m2) / np.linalg.norm(r2.r.data)
    print(f"w_jk = {scale:>4} x #frozen: cos(r2, own mean) {own:.3f}  routing accuracy {acc:.3f}")
