"""Pinhole camera, rigid poses and differentiable inverse warping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, Tensor, _make

MIN_Z = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1]], dtype=np.float64)

    def to_list(self) -> list[float]:
        return [self.fx, self.fy, self.cx, self.cy]

    @classmethod
    def from_list(cls, vals) -> "Intrinsics":
        return cls(*map(float, vals))

    def scaled(self, sx: float, sy: float) -> "Intrinsics":
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy)


@dataclass(frozen=True)
class Pose:
    """Rigid transform taking points in the target frame into the source frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-5) or abs(np.linalg.det(r) - 1) > 1e-5:
            raise ValueError("rotation must be orthonormal with det 1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """``self`` after ``other``."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def to_list(self) -> list[float]:
        return self.rotation.ravel().tolist() + self.translation.tolist()

    @classmethod
    def from_list(cls, vals) -> "Pose":
        vals = np.asarray(vals, dtype=np.float64)
        return cls(vals[:9].reshape(3, 3), vals[9:12])


def rotation_from_euler(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation matrix from XYZ Euler angles in radians."""
    cx, sx, cy, sy, cz, sz = np.cos(rx), np.sin(rx), np.cos(ry), np.sin(ry), np.cos(rz), np.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def backproject(pixel, depth, K: Intrinsics) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("backproject needs strictly positive depth")
    u, v = np.asarray(pixel, dtype=np.float64)[..., 0], np.asarray(pixel, dtype=np.float64)[..., 1]
    return np.stack([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth], axis=-1)


def project(points, K: Intrinsics) -> np.ndarray:
    """Pixel coordinates of camera-frame points; raises on z <= MIN_Z."""
    p = np.asarray(points, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= MIN_Z):
        raise ValueError("cannot project points at or behind the camera")
    return np.stack([K.fx * p[..., 0] / z + K.cx, K.fy * p[..., 1] / z + K.cy], axis=-1)


def pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    v, u = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return u, v


def reproject(depth: np.ndarray, pose: Pose, K: Intrinsics):
    """Source-frame pixel coordinates and depth for every target pixel.

    Returns ``(u, v, z, ray)`` where ``ray`` is the rotated unit-depth ray
    ``R K^-1 [u, v, 1]`` (the derivative of the source point w.r.t. depth).
    """
    h, w = depth.shape
    u, v = pixel_grid(h, w)
    a = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    ray = a @ pose.rotation.T
    pts = ray * depth[..., None].astype(np.float64) + pose.translation
    z = pts[..., 2]
    safe = np.where(z > MIN_Z, z, 1.0)
    us = K.fx * pts[..., 0] / safe + K.cx
    vs = K.fy * pts[..., 1] / safe + K.cy
    return us, vs, z, ray


def _validity(us, vs, z, h, w) -> np.ndarray:
    return (z > MIN_Z) & (us >= 0) & (us <= w - 1) & (vs >= 0) & (vs <= h - 1)


def warp_image(src, depth: Tensor, pose: Pose, K: Intrinsics) -> tuple[Tensor, np.ndarray]:
    """Reconstruct the target view by sampling ``src`` at reprojected pixels.

    ``src`` is ``(h, w, 3)`` and ``depth`` is the target depth ``(h, w)``.
    Pixels that land outside the source image or behind its camera get value
    0 and validity 0. Differentiable w.r.t. depth (and ``src`` if it is a
    tape tensor).
    """
    src_t = src if isinstance(src, Tensor) else Tensor(src)
    img = src_t.data
    if img.ndim != 3 or depth.ndim != 2 or img.shape[:2] != depth.shape:
        raise DimensionError(f"warp_image extents mismatch: image {img.shape}, depth {depth.shape}")
    h, w, c = img.shape
    us, vs, z, ray = reproject(depth.data, pose, K)
    valid = _validity(us, vs, z, h, w)
    uc = np.clip(np.where(valid, us, 0.0), 0, w - 1)
    vc = np.clip(np.where(valid, vs, 0.0), 0, h - 1)
    x0 = np.minimum(np.floor(uc).astype(np.int64), w - 2)
    y0 = np.minimum(np.floor(vc).astype(np.int64), h - 2)
    tx = (uc - x0)[..., None]
    ty = (vc - y0)[..., None]
    i00, i01 = img[y0, x0], img[y0, x0 + 1]
    i10, i11 = img[y0 + 1, x0], img[y0 + 1, x0 + 1]
    out = (1 - ty) * ((1 - tx) * i00 + tx * i01) + ty * ((1 - tx) * i10 + tx * i11)
    vmask = valid[..., None]
    out = np.where(vmask, out, 0.0).astype(np.result_type(img.dtype, depth.data.dtype))

    def back(g):
        g = np.where(vmask, g, 0.0)
        gd = None
        if depth.requires_grad:
            dout_du = (1 - ty) * (i01 - i00) + ty * (i11 - i10)
            dout_dv = (1 - tx) * (i10 - i00) + tx * (i11 - i01)
            pts = ray * depth.data[..., None] + pose.translation
            zz = np.where(valid, pts[..., 2], 1.0)
            du_dd = K.fx * (ray[..., 0] * zz - pts[..., 0] * ray[..., 2]) / zz**2
            dv_dd = K.fy * (ray[..., 1] * zz - pts[..., 1] * ray[..., 2]) / zz**2
            gd = ((g * dout_du).sum(-1) * du_dd + (g * dout_dv).sum(-1) * dv_dd).astype(depth.data.dtype)
        gs = None
        if src_t.requires_grad:
            gs = np.zeros_like(img)
            for yy, xx, wt in (
                (y0, x0, (1 - ty) * (1 - tx)),
                (y0, x0 + 1, (1 - ty) * tx),
                (y0 + 1, x0, ty * (1 - tx)),
                (y0 + 1, x0 + 1, ty * tx),
            ):
                np.add.at(gs, (yy, xx), g * wt)
        return ((depth, gd), (src_t, gs))

    return _make(out, (depth, src_t), back), valid.astype(np.float32)
