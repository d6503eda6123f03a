"""Finite-difference checks for every differentiable op and composite loss."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .backbone import LatentTap, Modality
from .geometry import Intrinsics, Pose, rotation_from_euler, warp_image
from .losses import (
    LossWeights,
    descriptor_loss,
    photometric_loss,
    smoothness_loss,
    sparse_consistency_loss,
    ssim,
    total_loss,
)
from .prototypes import Ablation, PrototypeSet, local_bias, project_keys
from .tensor import Tensor, grad_check


def _away(rng, shape, lo=0.2, hi=1.0):
    """Values bounded away from zero so kinks (abs, leaky ReLU) are not straddled."""
    mag = rng.uniform(lo, hi, size=shape)
    return mag * rng.choice([-1.0, 1.0], size=shape)


def _weighted(y: Tensor, w: np.ndarray) -> Tensor:
    return T.reduce_sum(y * w.astype(y.data.dtype))


def _cases(rng: np.random.Generator) -> dict[str, Callable[[], float]]:
    cases = {}

    def unary(name, op, x):
        w = rng.normal(size=np.shape(op(Tensor(x)).data))
        cases[name] = lambda: grad_check(lambda t: _weighted(op(t), w), Tensor(x))

    a = _away(rng, (3, 4))
    b = _away(rng, (3, 4))
    unary("add", lambda t: t + b, a)
    unary("add_broadcast", lambda t: Tensor(a) + t, _away(rng, (4,)))
    unary("sub", lambda t: b - t, a)
    unary("mul", lambda t: t * b, a)
    unary("mul_broadcast", lambda t: Tensor(a) * t, _away(rng, (4,)))
    unary("div_numerator", lambda t: t / b, a)
    unary("div_denominator", lambda t: Tensor(b) / t, a)
    unary("square", T.square, a)
    unary("sqrt", T.sqrt, np.abs(a) + 0.5)
    unary("exp", T.exp, a)
    unary("abs", T.abs, a)
    unary("sigmoid", T.sigmoid, a * 3)
    unary("leaky_relu", lambda t: T.leaky_relu(t, 0.1), a)
    unary("reshape", lambda t: T.reshape(t, (4, 3)), a)
    unary("transpose", T.transpose, a)
    img = _away(rng, (2, 3, 4, 5))
    unary("flatten_spatial", T.flatten_spatial, img[0])
    unary("index", lambda t: t[..., :, 1:], img)
    unary("concat", lambda t: T.concat([t, Tensor(img)], axis=-1), img)
    unary("reduce_sum_axis", lambda t: T.reduce_sum(t, axis=1), img)
    unary("reduce_mean_axis", lambda t: T.reduce_mean(t, axis=-1, keepdims=True), img)
    unary("global_avg_pool", T.global_avg_pool, img)
    unary("l2_norm", lambda t: T.l2_norm(t, axis=-1), a)
    unary("matmul_left", lambda t: T.matmul(t, Tensor(b.T)), a)
    unary("matmul_right", lambda t: T.matmul(Tensor(a), t), b.T.copy())
    unary("softmax_rows", T.softmax_rows, a * 2)
    kern = rng.normal(0, 0.3, size=(3, 3, 5, 2))
    unary("conv2d_input", lambda t: T.conv2d(t, Tensor(kern), stride=1, pad=1), img)
    unary("conv2d_kernel", lambda t: T.conv2d(Tensor(img), t, stride=2, pad=1), kern)
    unary("upsample2x", T.upsample2x, img)
    unary("box_mean3", T.box_mean3, img)

    # geometry
    h, w = 8, 12
    K = Intrinsics(10.0, 10.0, (w - 1) / 2, (h - 1) / 2)
    pose = Pose(rotation_from_euler(0.01, -0.02, 0.005), np.array([0.05, 0.01, 0.0]))
    src = rng.uniform(size=(h, w, 3))
    depth = rng.uniform(1.5, 2.5, size=(h, w))
    wimg = rng.normal(size=(h, w, 3))
    cases["warp_image_depth"] = lambda: grad_check(
        lambda d: _weighted(warp_image(src, d, pose, K)[0], wimg), Tensor(depth), eps=1e-4
    )

    # losses
    tgt = rng.uniform(size=(1, h, w, 3))
    pred_img = tgt + _away(rng, tgt.shape, 0.02, 0.1)
    cases["ssim"] = lambda: grad_check(lambda t: T.reduce_mean(ssim(t, tgt)), Tensor(pred_img))
    valid = (rng.uniform(size=(1, h, w)) > 0.2).astype(np.float64)
    cases["photometric"] = lambda: grad_check(
        lambda t: photometric_loss(tgt, [(t, valid), (t * 0.5, valid)]).loss, Tensor(pred_img)
    )
    z = rng.uniform(1, 3, size=(1, h, w))
    mask = (rng.uniform(size=(1, h, w)) < 0.3).astype(np.float64)
    pd = z + _away(rng, (1, h, w), 0.05, 0.3)
    cases["sparse_consistency"] = lambda: grad_check(lambda t: sparse_consistency_loss(t, z * mask, mask), Tensor(pd))
    ramp = np.linspace(1, 2, w)[None, None, :] + np.linspace(0, 0.5, h)[None, :, None]
    ramp = ramp + rng.uniform(0, 0.01, ramp.shape)
    cases["smoothness"] = lambda: grad_check(lambda t: smoothness_loss(t, tgt), Tensor(ramp))
    s_k = rng.normal(size=8)
    others = [rng.normal(size=8), rng.normal(size=8)]
    r0 = rng.normal(size=8)
    cases["descriptor"] = lambda: grad_check(lambda r: descriptor_loss(s_k, r, others), Tensor(r0))

    def total(t):
        terms = {
            "ph": photometric_loss(tgt, [(t, valid)]).loss,
            "sz": T.reduce_mean(T.square(t)),
            "sm": T.reduce_mean(T.abs(t - Tensor(tgt - 0.5))),
            "dr": T.reduce_sum(t) * 0.001,
        }
        return total_loss(terms, LossWeights(), "adapt-agnostic")

    cases["total_loss"] = lambda: grad_check(total, Tensor(pred_img))

    # prototype adaptation
    c, n = 6, 4
    X = rng.normal(size=(1, 3, 4, c))
    P = rng.normal(0, 0.5, size=(n, c))
    W = np.eye(c) + rng.normal(0, 0.3, size=(c, c))
    wx = rng.normal(size=X.shape)
    cases["local_bias_X"] = lambda: grad_check(lambda t: _weighted(local_bias(t, Tensor(P), project_keys(Tensor(P), Tensor(W))), wx), Tensor(X))
    # Under stop-gradient the keys are constants as far as P is concerned.
    K_fixed = Tensor(P @ W)
    cases["local_bias_P"] = lambda: grad_check(lambda t: _weighted(local_bias(Tensor(X), t, K_fixed), wx), Tensor(P))
    cases["local_bias_P_no_stopgrad"] = lambda: grad_check(
        lambda t: _weighted(local_bias(Tensor(X), t, project_keys(t, Tensor(W), stop_grad=False)), wx), Tensor(P)
    )
    cases["local_bias_W"] = lambda: grad_check(lambda t: _weighted(local_bias(Tensor(X), Tensor(P), project_keys(Tensor(P), t)), wx), Tensor(W))

    def adapt_A(t):
        s = PrototypeSet(LatentTap("x", c, Modality.FUSED), 2, n, np.random.default_rng(0), Ablation())
        s.P.data = P.copy()
        s.A = t
        return _weighted(s.adapt(Tensor(X)), wx)

    a0 = rng.uniform(0.5, 1.5, size=c)
    cases["prototype_adapt_A"] = lambda: grad_check(adapt_A, Tensor(a0))
    return cases


def run_suite(seed: int = 0) -> dict[str, float]:
    """Worst relative error per check (run in float64 working precision)."""
    cases = _cases(np.random.default_rng(seed))
    return {name: fn() for name, fn in cases.items()}
