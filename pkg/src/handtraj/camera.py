"""Pinhole and weak-perspective cameras and the weak-to-full transform.

Weak-camera convention: ``s`` is in pixels per meter and ``(t_x, t_y)`` in
meters. A local point X projects weakly to ``s * (X_xy + t) + c``, which is
exactly the pinhole projection of ``X_xy + t`` placed at depth ``f / s``.
Set ``c = (0, 0)`` for crop-local coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, InvalidArgument


@dataclass(frozen=True)
class Intrinsics:
    f: float
    cx: float
    cy: float
    width: float
    height: float

    def __post_init__(self):
        if not self.f > 0:
            raise InvalidArgument(f"focal length must be positive, got {self.f}")
        if not (self.width > 0 and self.height > 0):
            raise InvalidArgument(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def matrix(self) -> np.ndarray:
        return np.array([[self.f, 0.0, self.cx], [0.0, self.f, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class WeakPerspCam:
    s: float
    tx: float
    ty: float

    def __post_init__(self):
        if not (math.isfinite(self.s) and math.isfinite(self.tx) and math.isfinite(self.ty)):
            raise InvalidArgument("weak camera parameters must be finite")
        if not self.s > 0:
            raise InvalidArgument(f"weak camera scale must be positive, got {self.s}")

    @property
    def t(self) -> np.ndarray:
        return np.array([self.tx, self.ty])


def default_intrinsics(width: float, height: float) -> Intrinsics:
    """Focal length = image diagonal, principal point at the image center."""
    if not (width > 0 and height > 0):
        raise InvalidArgument(f"image size must be positive, got {width}x{height}")
    return Intrinsics(math.hypot(width, height), width / 2.0, height / 2.0, width, height)


def perspective_project(points, K: Intrinsics) -> np.ndarray:
    """Project camera-frame points (..., 3) to pixels (..., 2)."""
    p = np.asarray(points, dtype=float)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise BehindCamera(f"{int(np.sum(~(z > 0)))} point(s) at or behind the camera plane")
    return K.f * p[..., :2] / z[..., None] + K.center


def back_project(pixels, depth, K: Intrinsics) -> np.ndarray:
    """Inverse of :func:`perspective_project` given each point's depth."""
    uv = np.asarray(pixels, dtype=float)
    z = np.asarray(depth, dtype=float)
    xy = (uv - K.center) * (z[..., None] / K.f)
    return np.concatenate([xy, z[..., None]], axis=-1)


def weak_project(local_points, cam: WeakPerspCam, K: Intrinsics) -> np.ndarray:
    p = np.asarray(local_points, dtype=float)
    return cam.s * (p[..., :2] + cam.t) + K.center


def weak_to_full(cam: WeakPerspCam, f: float) -> np.ndarray:
    """Camera-frame translation ``(t_x, t_y, f / s)`` for a weak camera."""
    if not f > 0:
        raise InvalidArgument(f"focal length must be positive, got {f}")
    if not cam.s > 0:
        raise InvalidArgument(f"weak camera scale must be positive, got {cam.s}")
    return np.array([cam.tx, cam.ty, f / cam.s])


def wtf_depth_sensitivity(f, s, eps):
    """Depth shift caused by a relative scale error ``eps``.

    Returns ``f/s - f/(s*(1+eps))``: the true depth minus the depth placed by
    weak-to-full when the predicted scale is ``s*(1+eps)``. Vectorized.
    """
    f = np.asarray(f, dtype=float)
    s = np.asarray(s, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if np.any(~(f > 0)) or np.any(~(s > 0)):
        raise InvalidArgument("f and s must be positive")
    if np.any(~(eps > -1)):
        raise InvalidArgument("relative scale error must exceed -1")
    out = (f / s) * (eps / (1.0 + eps))
    return float(out) if out.ndim == 0 else out
