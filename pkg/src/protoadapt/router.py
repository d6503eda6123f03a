"""Sample/domain descriptors and test-time prototype-set selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .losses import descriptor_loss
from .tensor import NumericError, Tensor


@dataclass
class DomainDescriptor:
    r: Tensor
    domain_id: int
    frozen: bool = False

    def freeze(self):
        self.frozen = True
        self.r.requires_grad = False
        self.r.grad = None


def sample_descriptor(bottleneck) -> np.ndarray:
    """Channel means of pre-adaptation bottleneck features ``(h, w, c)`` or ``(n, h, w, c)``."""
    x = bottleneck.data if isinstance(bottleneck, Tensor) else np.asarray(bottleneck)
    return x.mean(axis=(-3, -2))


def _cosines(s: np.ndarray, descriptors: Sequence[DomainDescriptor]) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    ns = np.linalg.norm(s)
    if ns == 0:
        raise NumericError("zero-norm sample descriptor")
    out = []
    for d in descriptors:
        r = d.r.data.astype(np.float64)
        out.append(float(s @ r) / (ns * np.linalg.norm(r)))
    return np.asarray(out)


def select_domain(s, descriptors: Sequence[DomainDescriptor]) -> int:
    """Domain whose descriptor has the highest cosine with ``s``; ties go to the lowest id."""
    if not descriptors:
        raise ValueError("no domain descriptors to select from")
    order = sorted(descriptors, key=lambda d: d.domain_id)
    cos = _cosines(s, order)
    return order[int(np.argmax(cos))].domain_id


def fit_initial_descriptor(descriptors: np.ndarray, domain_id: int = 1) -> DomainDescriptor:
    """Frozen unit-norm mean of the given sample descriptors."""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2 or len(descriptors) == 0:
        raise ValueError("need a non-empty (n, c) array of sample descriptors")
    m = descriptors.mean(axis=0)
    norm = np.linalg.norm(m)
    if norm == 0:
        raise NumericError("mean sample descriptor has zero norm")
    d = DomainDescriptor(Tensor((m / norm).astype(np.float32)), domain_id)
    d.freeze()
    return d


def init_descriptor(descriptors: np.ndarray, domain_id: int, rng: np.random.Generator, noise: float = 1e-3) -> DomainDescriptor:
    """Trainable descriptor started at the mean of a first batch plus small noise."""
    m = np.asarray(descriptors, dtype=np.float64).mean(axis=0)
    m = m + rng.normal(0.0, noise * max(np.linalg.norm(m), 1e-6), size=m.shape)
    return DomainDescriptor(Tensor(m.astype(np.float32), requires_grad=True), domain_id)


def batch_descriptor_loss(
    samples: np.ndarray, r_k: Tensor, frozen: Sequence[DomainDescriptor], w_scale: float = 1.0
) -> Tensor:
    """Descriptor loss averaged over per-sample descriptors; ``w_jk = w_scale * len(frozen)``."""
    others = [d.r.data for d in frozen]
    w_jk = w_scale * len(others) if others else None
    total = None
    for s in np.asarray(samples):
        term = descriptor_loss(s, r_k, others, w_jk)
        total = term if total is None else total + term
    return total / float(len(samples))


def train_descriptor_step(d: DomainDescriptor, s_k, frozen: Sequence[DomainDescriptor], lr: float) -> float:
    """One plain gradient step on the descriptor loss w.r.t. ``d.r`` only; returns the loss before the step."""
    if d.frozen:
        raise ValueError(f"descriptor {d.domain_id} is frozen")
    s_k = np.atleast_2d(np.asarray(s_k))
    d.r.grad = None
    loss = batch_descriptor_loss(s_k, d.r, frozen)
    loss.backward()
    d.r.data = (d.r.data - lr * d.r.grad).astype(d.r.data.dtype)
    d.r.grad = None
    return loss.item()
