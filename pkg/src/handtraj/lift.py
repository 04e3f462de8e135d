"""Turning per-frame local hand predictions into a camera-frame 4D trajectory.

Three lifts are provided: weak-to-full (depth ``f / s`` per frame), depth
change (first-frame depth ``d1`` plus a metric offset per frame) and
depth-map alignment (median offset between a depth map and the hand
surface). Long sequences are processed in windows and re-joined with
:func:`stitch_windows`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .camera import Intrinsics, WeakPerspCam, weak_project
from .errors import BehindCamera, InsufficientEvidence, InvalidArgument
from .kinematics import HandPose, HandShape, HandTemplate, NUM_JOINTS, forward_kinematics


@dataclass(frozen=True)
class FramePrediction:
    """What a per-frame network head outputs: local hand, weak camera, depth change."""

    pose: HandPose
    shape: HandShape
    cam: WeakPerspCam
    delta_d: float = 0.0
    keypoints2d: np.ndarray | None = None  # observed (21, 2) pixels, optional

    def __post_init__(self):
        if not np.isfinite(self.delta_d):
            raise InvalidArgument("delta_d must be finite")


@dataclass(frozen=True)
class WindowConfig:
    window_size: int = 8
    overlap: int = 1

    def __post_init__(self):
        if self.window_size < 1 or not 0 <= self.overlap < self.window_size:
            raise InvalidArgument(f"invalid window config {self.window_size}/{self.overlap}")


@dataclass
class Trajectory:
    """Camera-frame joints over time.

    ``joints`` is (T, 21, 3) in meters, ``roots`` the (T, 3) translation that
    was added to the local hand. Poses and betas are kept when known so the
    trajectory can be refined or written back out.
    """

    joints: np.ndarray
    roots: np.ndarray
    intrinsics: Intrinsics | None = None
    fps: float = 30.0
    poses: np.ndarray | None = None  # (T, 16, 3)
    betas: np.ndarray | None = None  # (T, 10)
    frame_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float)
        self.roots = np.asarray(self.roots, dtype=float)
        T = self.joints.shape[0] if self.joints.ndim == 3 else 0
        if T < 1 or self.joints.shape != (T, NUM_JOINTS, 3) or self.roots.shape != (T, 3):
            raise InvalidArgument(
                f"trajectory needs (T,21,3) joints and (T,3) roots, got {self.joints.shape}, {self.roots.shape}"
            )
        if not (np.all(np.isfinite(self.joints)) and np.all(np.isfinite(self.roots))):
            raise InvalidArgument("trajectory contains non-finite values")
        if not self.fps > 0:
            raise InvalidArgument("fps must be positive")
        if self.frame_ids is None:
            self.frame_ids = np.arange(T)
        self.frame_ids = np.asarray(self.frame_ids, dtype=int)
        if self.frame_ids.shape != (T,) or np.any(np.diff(self.frame_ids) <= 0):
            raise InvalidArgument("frame ids must be strictly increasing, one per frame")

    def __len__(self) -> int:
        return self.joints.shape[0]

    @property
    def local_joints(self) -> np.ndarray:
        return self.joints - self.roots[:, None, :]

    def slice(self, start: int, stop: int) -> "Trajectory":
        sl = slice(start, stop)
        return replace(
            self,
            joints=self.joints[sl].copy(),
            roots=self.roots[sl].copy(),
            poses=None if self.poses is None else self.poses[sl].copy(),
            betas=None if self.betas is None else self.betas[sl].copy(),
            frame_ids=self.frame_ids[sl].copy(),
        )

    def translated(self, offset) -> "Trajectory":
        offset = np.asarray(offset, dtype=float)
        return replace(self, joints=self.joints + offset, roots=self.roots + offset)

    def with_roots(self, roots) -> "Trajectory":
        roots = np.asarray(roots, dtype=float)
        return replace(self, joints=self.local_joints + roots[:, None, :], roots=roots)


@dataclass
class DepthMap:
    """Metric depth image; NaN marks invalid pixels."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.size == 0:
            raise InvalidArgument("depth map must be a non-empty 2D array")
        v = self.values[~np.isnan(self.values)]
        if np.any(~(v > 0)) or np.any(~np.isfinite(v)):
            raise InvalidArgument("valid depth values must be finite and positive")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.values)


def pixel_index(uv) -> np.ndarray:
    """Nearest integer pixel (column, row) for continuous pixel coordinates."""
    return np.floor(np.asarray(uv, dtype=float) + 0.5).astype(np.int64)


def splat_depth(pixels, depths, width: int, height: int, half_sizes=0) -> DepthMap:
    """Z-buffer render: square footprints of ``2*h+1`` pixels, nearest depth wins."""
    ij = pixel_index(pixels).reshape(-1, 2)
    d = np.asarray(depths, dtype=float).reshape(-1)
    h = np.broadcast_to(np.asarray(half_sizes, dtype=np.int64), d.shape)
    buf = np.full((height, width), np.inf)
    for (u, v), z, r in zip(ij, d, h):
        x0, x1 = max(u - r, 0), min(u + r + 1, width)
        y0, y1 = max(v - r, 0), min(v + r + 1, height)
        if x0 < x1 and y0 < y1:
            region = buf[y0:y1, x0:x1]
            np.minimum(region, z, out=region)
    buf[np.isinf(buf)] = np.nan
    return DepthMap(buf)


def _stack(predictions: Sequence[FramePrediction]):
    if len(predictions) == 0:
        raise InvalidArgument("need at least one frame prediction")
    rots = np.stack([p.pose.rotations() for p in predictions])
    betas = np.stack([p.shape.betas for p in predictions])
    cams = np.array([[p.cam.s, p.cam.tx, p.cam.ty] for p in predictions])
    dd = np.array([p.delta_d for p in predictions], dtype=float)
    return rots, betas, cams, dd


def _assemble(rots, betas, roots, intrinsics, fps, template, frame_ids=None) -> Trajectory:
    local = forward_kinematics(rots, betas, template)
    return Trajectory(local + roots[:, None, :], roots, intrinsics, fps, rots, betas, frame_ids)


def lift_wtf(predictions: Sequence[FramePrediction], intrinsics: Intrinsics, *, fps: float = 30.0,
             template: HandTemplate | None = None, frame_ids=None) -> Trajectory:
    """Weak-to-full lift: frame t sits at ``(t_x, t_y, f / s_t)``.

    ``intrinsics.f`` is the focal length assumed for the lift; pass
    :func:`~handtraj.camera.default_intrinsics` for the unknown-camera baseline.
    """
    rots, betas, cams, _ = _stack(predictions)
    bad = np.flatnonzero(~(cams[:, 0] > 0))
    if bad.size:
        raise InvalidArgument(f"weak camera scale must be positive (frame {bad[0]})")
    roots = np.column_stack([cams[:, 1], cams[:, 2], intrinsics.f / cams[:, 0]])
    return _assemble(rots, betas, roots, intrinsics, fps, template, frame_ids)


def lift_depth_change(predictions: Sequence[FramePrediction], d1: float,
                      intrinsics: Intrinsics | None = None, *, fps: float = 30.0,
                      template: HandTemplate | None = None, frame_ids=None) -> Trajectory:
    """Depth-change lift: frame t sits at ``(t_x, t_y, d1 + delta_d_t)``."""
    if not d1 > 0:
        raise InvalidArgument(f"first-frame depth must be positive, got {d1}")
    rots, betas, cams, dd = _stack(predictions)
    if dd[0] != 0:
        raise InvalidArgument(f"first frame must have delta_d = 0, got {dd[0]}")
    depth = d1 + dd
    bad = np.flatnonzero(~(depth > 0))
    if bad.size:
        raise BehindCamera(f"lifted depth {depth[bad[0]]:.4g} m is not in front of the camera (frame {bad[0]})")
    roots = np.column_stack([cams[:, 1], cams[:, 2], depth])
    return _assemble(rots, betas, roots, intrinsics, fps, template, frame_ids)


def depthmap_offsets(points, radii, cam: WeakPerspCam, K: Intrinsics, depth: DepthMap) -> np.ndarray:
    """Per-sample root-depth candidates over samples that land on valid pixels.

    The visible surface is taken to lie one radius in front of the bone axis,
    so a sample at local depth ``p_z`` observed at depth ``D`` implies a root
    depth of ``D + r - p_z``.
    """
    pts = np.asarray(points, dtype=float)
    radii = np.broadcast_to(np.asarray(radii, dtype=float), pts.shape[:1])
    ij = pixel_index(weak_project(pts, cam, K))
    inside = (ij[:, 0] >= 0) & (ij[:, 0] < depth.width) & (ij[:, 1] >= 0) & (ij[:, 1] < depth.height)
    obs = np.full(len(pts), np.nan)
    obs[inside] = depth.values[ij[inside, 1], ij[inside, 0]]
    ok = ~np.isnan(obs)
    return obs[ok] + radii[ok] - pts[ok, 2]


def lift_depthmap(points, radii, cam: WeakPerspCam, K: Intrinsics, depth: DepthMap) -> np.ndarray:
    """Translation placing the local surface samples at the observed depth.

    ``T_xy`` comes from the weak camera; ``T_z`` is the median of the
    per-sample offsets, which tolerates partial occlusion.
    """
    offsets = depthmap_offsets(points, radii, cam, K, depth)
    if offsets.size == 0:
        raise InsufficientEvidence("no surface sample projects onto a valid depth pixel")
    return np.array([cam.tx, cam.ty, float(np.median(offsets))])


def lift_depthmap_sequence(predictions: Sequence[FramePrediction], depth_maps: Sequence[DepthMap],
                           intrinsics: Intrinsics, *, fps: float = 30.0, samples_per_bone: int = 4,
                           template: HandTemplate | None = None, frame_ids=None) -> Trajectory:
    from .kinematics import surface_samples

    if len(depth_maps) != len(predictions):
        raise InvalidArgument(f"{len(predictions)} predictions but {len(depth_maps)} depth maps")
    rots, betas, _, _ = _stack(predictions)
    pts, radii = surface_samples(rots, betas, template, samples_per_bone)
    roots = np.empty((len(predictions), 3))
    for t, (pred, dm) in enumerate(zip(predictions, depth_maps)):
        try:
            roots[t] = lift_depthmap(pts[t], radii, pred.cam, intrinsics, dm)
        except InsufficientEvidence as exc:
            raise InsufficientEvidence(f"{exc} (frame {t})") from None
    return _assemble(rots, betas, roots, intrinsics, fps, template, frame_ids)


def split_windows(traj: Trajectory, config: WindowConfig) -> list[Trajectory]:
    """Cut a trajectory into windows sharing ``overlap`` frames.

    Every window has ``window_size`` frames except possibly the last one,
    which is shorter when the frames do not divide evenly.
    """
    M, ov = config.window_size, config.overlap
    if ov < 1:
        raise InvalidArgument("stitchable windows need overlap >= 1")
    T = len(traj)
    out, start = [], 0
    while True:
        stop = min(start + M, T)
        out.append(traj.slice(start, stop))
        if stop == T:
            return out
        start = stop - ov


def stitch_windows(windows: Sequence[Trajectory], overlap: int = 1) -> Trajectory:
    """Join overlapping windows into one trajectory.

    Each window after the first is shifted along z so that its first shared
    frame has the root depth already stitched for that frame. Shared frames
    keep the earlier window's values.
    """
    if len(windows) == 0:
        raise InvalidArgument("no windows to stitch")
    if overlap < 1:
        raise InvalidArgument("overlap must be >= 1")
    M = len(windows[0])
    for k, w in enumerate(windows):
        last = k == len(windows) - 1
        if (len(w) != M and not last) or len(w) > M or len(w) <= (overlap if len(windows) > 1 else 0):
            raise InvalidArgument(f"window {k} has {len(w)} frames, expected {M}")
    out = windows[0]
    for k, w in enumerate(windows[1:], start=1):
        if not np.array_equal(out.frame_ids[-overlap:], w.frame_ids[:overlap]):
            raise InvalidArgument(f"window {k} does not share {overlap} frame(s) with its predecessor")
        shift = out.roots[len(out) - overlap, 2] - w.roots[0, 2]
        w = w.translated([0.0, 0.0, shift]).slice(overlap, len(w))
        out = replace(
            out,
            joints=np.concatenate([out.joints, w.joints]),
            roots=np.concatenate([out.roots, w.roots]),
            poses=None if out.poses is None or w.poses is None else np.concatenate([out.poses, w.poses]),
            betas=None if out.betas is None or w.betas is None else np.concatenate([out.betas, w.betas]),
            frame_ids=np.concatenate([out.frame_ids, w.frame_ids]),
        )
    return out


def lift_depth_change_windowed(predictions: Sequence[FramePrediction], d1: float, window: WindowConfig,
                               intrinsics: Intrinsics | None = None, *, fps: float = 30.0,
                               template: HandTemplate | None = None, frame_ids=None) -> Trajectory:
    """Depth-change lift run window by window, then stitched.

    Each window sees depth changes relative to its own first frame, as a
    windowed network would predict them; stitching restores one depth chain.
    """
    n = len(predictions)
    ids = np.arange(n) if frame_ids is None else np.asarray(frame_ids)
    starts, start = [], 0
    while True:
        stop = min(start + window.window_size, n)
        starts.append((start, stop))
        if stop == n:
            break
        start = stop - window.overlap
    windows = []
    for a, b in starts:
        base = predictions[a].delta_d
        chunk = [replace(p, delta_d=0.0 if k == 0 else p.delta_d - base) for k, p in enumerate(predictions[a:b])]
        windows.append(lift_depth_change(chunk, d1, intrinsics, fps=fps, template=template, frame_ids=ids[a:b]))
    return stitch_windows(windows, window.overlap)
