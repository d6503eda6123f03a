import numpy as np
import pytest

from protoadapt.geometry import (
    Intrinsics,
    Pose,
    backproject,
    project,
    reproject,
    rotation_from_euler,
    warp_image,
)
from protoadapt.tensor import DimensionError, Tensor, grad_check

K = Intrinsics(20.0, 22.0, 7.5, 5.5)


def test_backproject_principal_point():
    np.testing.assert_allclose(backproject([K.cx, K.cy], 2.0, K), [0, 0, 2])


def test_backproject_unit_intrinsics():
    np.testing.assert_allclose(backproject([3, 4], 1.0, Intrinsics(1, 1, 0, 0)), [3, 4, 1])


def test_project_round_trip():
    rng = np.random.default_rng(0)
    px = rng.uniform(0, 15, size=(50, 2))
    d = rng.uniform(0.3, 10, size=50)
    np.testing.assert_allclose(project(backproject(px, d, K), K), px, atol=1e-5)


def test_domain_errors():
    with pytest.raises(ValueError):
        backproject([1, 1], 0.0, K)
    with pytest.raises(ValueError):
        project([0, 0, -1.0], K)
    with pytest.raises(ValueError):
        Intrinsics(0, 1, 0, 0)


def test_pose_validation_and_serialization():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    p = Pose(rotation_from_euler(0.1, -0.2, 0.3), [1, 2, 3])
    q = Pose.from_list(p.to_list())
    np.testing.assert_array_equal(q.rotation, p.rotation)
    np.testing.assert_array_equal(q.translation, p.translation)
    ident = p.compose(p.inverse())
    np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(ident.translation, 0, atol=1e-12)


def _scene(h=12, w=16, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(size=(h, w, 3)).astype(np.float32), rng.uniform(1.0, 3.0, size=(h, w)).astype(np.float32)


def test_identity_warp():
    src, depth = _scene()
    out, valid = warp_image(src, Tensor(depth), Pose.identity(), K)
    assert valid.all()
    np.testing.assert_allclose(out.data, src, atol=1e-6)


def test_z_translation_closed_form():
    h, w, plane, tz = 12, 16, 2.0, 0.3
    depth = np.full((h, w), plane)
    us, vs, z, _ = reproject(depth, Pose(np.eye(3), [0, 0, tz]), K)
    u, v = np.meshgrid(np.arange(w), np.arange(h))
    np.testing.assert_allclose(us, K.cx + (u - K.cx) * plane / (plane + tz), atol=0.5)
    np.testing.assert_allclose(vs, K.cy + (v - K.cy) * plane / (plane + tz), atol=0.5)
    np.testing.assert_allclose(z, plane + tz)
    # a ramp image samples back the closed-form coordinate exactly (bilinear is exact on linear images)
    ramp = np.repeat((np.arange(w, dtype=np.float32) / w)[None, :, None], h, 0).repeat(3, 2)
    out, valid = warp_image(ramp, Tensor(depth.astype(np.float32)), Pose(np.eye(3), [0, 0, tz]), K)
    sel = valid.astype(bool)
    expect = (K.cx + (u - K.cx) * plane / (plane + tz)) / w
    np.testing.assert_allclose(out.data[..., 0][sel], expect[sel], atol=1e-5)


def test_behind_camera_all_invalid():
    src, depth = _scene()
    out, valid = warp_image(src, Tensor(depth), Pose(np.eye(3), [0, 0, -10.0]), K)
    assert not valid.any()
    assert not out.data.any()


def test_round_trip_chain():
    src, depth = _scene()
    p = Pose(rotation_from_euler(0.02, 0.01, -0.01), [0.05, -0.02, 0.01])
    out, valid = warp_image(src, Tensor(depth), p.compose(p.inverse()), K)
    np.testing.assert_allclose(out.data[1:-1, 1:-1], src[1:-1, 1:-1], atol=1e-4)


def test_validity_binary_and_border():
    src, depth = _scene()
    # shift sampling right by ~half a pixel: the last column falls outside [0, w-1]
    shift = 0.5 * 2.0 / K.fx
    _, valid = warp_image(src, Tensor(np.full_like(depth, 2.0)), Pose(np.eye(3), [shift, 0, 0]), K)
    assert set(np.unique(valid)) <= {0.0, 1.0}
    assert not valid[:, -1].any()
    assert valid[:, :-1].all()


def test_extent_mismatch():
    src, depth = _scene()
    with pytest.raises(DimensionError):
        warp_image(src, Tensor(depth[:-1]), Pose.identity(), K)


def test_warp_depth_gradient_8x8():
    rng = np.random.default_rng(3)
    k8 = Intrinsics(8.0, 8.0, 3.5, 3.5)
    src = rng.uniform(size=(8, 8, 3))
    depth = rng.uniform(1.5, 2.5, size=(8, 8))
    w = rng.normal(size=(8, 8, 3))
    pose = Pose(rotation_from_euler(0.01, 0.02, 0.0), [0.05, 0.0, 0.02])

    def f(d):
        out, _ = warp_image(src, d, pose, k8)
        return (out * w).sum()

    assert grad_check(f, Tensor(depth), eps=1e-4) < 5e-3
