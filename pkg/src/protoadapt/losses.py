"""Training objectives and depth-completion error metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .tensor import NumericError, Tensor

C1 = 0.01**2
C2 = 0.03**2

MODES = ("pretrain", "adapt-incremental", "adapt-agnostic")


@dataclass(frozen=True)
class LossWeights:
    w_ph: float = 1.0
    w_sz: float = 1.0
    w_sm: float = 0.1
    w_dr: float = 0.1
    w_co: float = 0.15
    w_st: float = 0.85

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be nonnegative, got {v}")
        if self.w_co + self.w_st <= 0:
            raise ValueError("w_co + w_st must be positive")


def ssim(a, b) -> Tensor:
    """Per-pixel SSIM over 3x3 windows, averaged across colour channels."""
    a, b = T._wrap(a), T._wrap(b)
    if a.shape != b.shape:
        raise T.DimensionError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    mu_a = T.box_mean3(a)
    mu_b = T.box_mean3(b)
    mu_aa = T.square(mu_a)
    mu_bb = T.square(mu_b)
    mu_ab = mu_a * mu_b
    var_a = T.box_mean3(T.square(a)) - mu_aa
    var_b = T.box_mean3(T.square(b)) - mu_bb
    cov = T.box_mean3(a * b) - mu_ab
    num = (2.0 * mu_ab + C1) * (2.0 * cov + C2)
    den = (mu_aa + mu_bb + C1) * (var_a + var_b + C2)
    return T.reduce_mean(num / den, axis=-1)


class Photometric(NamedTuple):
    loss: Tensor
    supported: bool


def photometric_loss(
    target,
    warped: Sequence[tuple[Tensor, np.ndarray]],
    weights: LossWeights = LossWeights(),
) -> Photometric:
    """L1 + (1 - SSIM) reconstruction error averaged over valid pixels of all views."""
    if not warped:
        raise ValueError("photometric_loss needs at least one adjacent view")
    target = T._wrap(target)
    total = None
    count = 0.0
    for img, valid in warped:
        valid = np.asarray(valid, dtype=target.data.dtype)
        l1 = T.reduce_mean(T.abs(img - target), axis=-1)
        per_pixel = weights.w_co * l1
        if weights.w_st > 0:
            per_pixel = per_pixel + weights.w_st * (1.0 - ssim(img, target))
        term = T.reduce_sum(per_pixel * valid)
        total = term if total is None else total + term
        count += float(valid.sum())
    if count == 0:
        return Photometric(Tensor(np.zeros((), dtype=target.data.dtype)), False)
    return Photometric(total / count, True)


def sparse_consistency_loss(pred: Tensor, z, mask) -> Tensor:
    """Masked L1 to sparse depth, normalised by the total pixel count."""
    mask = np.asarray(mask, dtype=pred.data.dtype)
    z = np.asarray(z, dtype=pred.data.dtype)
    return T.reduce_sum(T.abs((pred - z) * mask)) / float(pred.data.size)


def smoothness_loss(pred: Tensor, image) -> Tensor:
    """Edge-aware L1 on forward depth differences, weighted by exp(-|image gradient|)."""
    img = np.asarray(image.data if isinstance(image, Tensor) else image)
    lam_x = np.exp(-np.abs(img[..., :, 1:, :] - img[..., :, :-1, :]).mean(-1))
    lam_y = np.exp(-np.abs(img[..., 1:, :, :] - img[..., :-1, :, :]).mean(-1))
    dx = pred[..., :, 1:] - pred[..., :, :-1]
    dy = pred[..., 1:, :] - pred[..., :-1, :]
    total = T.reduce_sum(T.abs(dx) * lam_x.astype(pred.data.dtype)) + T.reduce_sum(
        T.abs(dy) * lam_y.astype(pred.data.dtype)
    )
    return total / float(pred.data.size)


def _unit(v) -> Tensor:
    v = T._wrap(v)
    n = T.l2_norm(v)
    if float(n.data) == 0.0:
        raise NumericError("zero-norm descriptor")
    return v / n


def cosine(a, b) -> Tensor:
    return T.reduce_sum(_unit(a) * _unit(b))


def descriptor_loss(s_k, r_k: Tensor, frozen_others: Sequence = (), w_jk: float | None = None) -> Tensor:
    """Pull ``r_k`` toward the sample descriptor and away from frozen descriptors.

    ``s_k`` and the frozen descriptors are treated as constants; only ``r_k``
    can receive gradient. ``w_jk`` defaults to the number of frozen descriptors.
    """
    s = T.detach(T._wrap(s_k))
    loss = 1.0 - cosine(s, r_k)
    if len(frozen_others):
        if w_jk is None:
            w_jk = float(len(frozen_others))
        if w_jk <= 0:
            raise ValueError("w_jk must be positive when frozen descriptors are given")
        cross = None
        for r_j in frozen_others:
            c = cosine(T.detach(T._wrap(r_j)), r_k)
            cross = c if cross is None else cross + c
        loss = loss + cross / w_jk
    return loss


def total_loss(terms: dict, weights: LossWeights, mode: str = "pretrain") -> Tensor:
    """Weighted sum of the ``ph``, ``sz``, ``sm`` (and ``dr`` in agnostic mode) terms."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    names = ["ph", "sz", "sm"]
    if mode == "adapt-agnostic":
        names.append("dr")
    elif "dr" in terms:
        raise ValueError(f"descriptor term given in {mode} mode")
    out = Tensor(np.zeros((), dtype=np.float32))
    for name in names:
        term = terms[name]
        if not np.isfinite(term.data).all():
            raise NumericError(f"non-finite loss term {name!r}")
        w = getattr(weights, f"w_{name}")
        if w:
            out = out + w * term
    return out


class ErrorMetrics(NamedTuple):
    mae: float
    rmse: float
    imae: float
    irmse: float


def error_metrics(pred, gt, d_min: float, d_max: float, scale: float = 1.0) -> ErrorMetrics:
    """MAE/RMSE/iMAE/iRMSE over pixels with ground truth inside ``[d_min, d_max]``.

    ``scale`` multiplies depths before comparison (1000 reports meters as mm).
    """
    pred = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    sel = (gt > 0) & (gt >= d_min) & (gt <= d_max)
    if not sel.any():
        raise ValueError("no ground-truth pixels inside the evaluation range")
    p, g = pred[sel] * scale, gt[sel] * scale
    err = p - g
    ierr = 1.0 / p - 1.0 / g
    return ErrorMetrics(
        float(np.mean(np.abs(err))),
        float(np.sqrt(np.mean(err**2))),
        float(np.mean(np.abs(ierr))),
        float(np.sqrt(np.mean(ierr**2))),
    )
