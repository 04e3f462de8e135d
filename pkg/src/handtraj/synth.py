"""Synthetic ground truth and controlled-noise predictions.

All randomness comes from numpy's Philox4x64-10 counter-based generator
keyed by the user seed (``np.random.Generator(np.random.Philox(key=seed))``),
drawn in a fixed order, so equal specs and seeds give bit-identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .camera import Intrinsics, WeakPerspCam, perspective_project
from .errors import InvalidArgument
from .kinematics import HandPose, HandShape, HandTemplate, NUM_BETAS, surface_samples, forward_kinematics
from .lift import DepthMap, FramePrediction, Trajectory, splat_depth

MOTION_KINDS = ("static", "linear", "sinusoidal", "reach-and-retract")


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


@dataclass(frozen=True)
class MotionSpec:
    kind: str = "reach-and-retract"
    amplitude: float = 0.15  # meters
    period: float = 30.0  # frames, sinusoidal only
    base_depth: float = 0.6  # meters
    fps: float = 6.0
    length: int = 60
    seed: int = 0
    direction: tuple | None = None  # unit motion direction; drawn from the seed when None
    center_xy: tuple | None = None  # root xy at rest (meters); drawn from the seed when None
    articulation: float = 0.3  # finger flexion swing (radians)

    def __post_init__(self):
        if self.kind not in MOTION_KINDS:
            raise InvalidArgument(f"unknown motion kind {self.kind!r}; expected one of {MOTION_KINDS}")
        if self.amplitude < 0 or self.period < 2 or not self.base_depth > 0:
            raise InvalidArgument("need amplitude >= 0, period >= 2 and base_depth > 0")
        if self.length < 1 or not self.fps > 0:
            raise InvalidArgument("need length >= 1 and fps > 0")


@dataclass(frozen=True)
class NoiseSpec:
    scale_rel_sigma: float = 0.0
    depth_sigma: float = 0.0  # meters
    pose_sigma: float = 0.0  # radians
    pixel_sigma: float = 0.0  # pixels
    seed: int = 1

    def __post_init__(self):
        if min(self.scale_rel_sigma, self.depth_sigma, self.pose_sigma, self.pixel_sigma) < 0:
            raise InvalidArgument("noise sigmas must be non-negative")


@dataclass
class GroundTruth:
    trajectory: Trajectory
    keypoints2d: np.ndarray  # (T, 21, 2)
    depth_maps: list | None


def motion_profile(spec: MotionSpec) -> np.ndarray:
    t = np.arange(spec.length, dtype=float)
    if spec.kind == "static" or spec.length == 1:
        return np.zeros(spec.length)
    if spec.kind == "linear":
        return t / (spec.length - 1)
    if spec.kind == "sinusoidal":
        return np.sin(2.0 * np.pi * t / spec.period)
    # reach-and-retract: out and back along the same path, closed at both ends
    prof = 0.5 * (1.0 - np.cos(2.0 * np.pi * t / (spec.length - 1)))
    prof[-1] = prof[0]
    return prof


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not n > 0:
        raise InvalidArgument("motion direction must be non-zero")
    return v / n


def generate_gt(spec: MotionSpec, K: Intrinsics, *, template: HandTemplate | None = None,
                depth_maps: bool = True, samples_per_bone: int = 4) -> GroundTruth:
    """Synthesize a camera-frame hand trajectory with exact 2D keypoints.

    Depth maps (``K.width`` x ``K.height``) are z-buffer splats of the hand's
    surface samples with square footprints the size of each sample's radius.
    """
    rng = philox(spec.seed)
    direction = rng.normal(size=3)
    center = rng.uniform(-0.04, 0.04, size=2)
    flex0 = rng.uniform(0.1, 0.5, size=(5, 3))
    wrist0 = rng.normal(0.0, 0.2, size=3)
    betas = rng.normal(0.0, 1.0, size=NUM_BETAS)
    if spec.direction is not None:
        direction = spec.direction
    direction = _unit(direction)
    if spec.center_xy is not None:
        center = np.asarray(spec.center_xy, dtype=float)

    prof = motion_profile(spec)
    T = spec.length
    poses = np.zeros((T, 16, 3))
    poses[:, 0] = wrist0
    # flexion about each joint's local x axis
    poses[:, 1:, 0] = (flex0.reshape(15)[None, :] + spec.articulation * prof[:, None]) * np.where(
        np.arange(15) < 3, 0.5, 1.0
    )
    roots = np.empty((T, 3))
    roots[:, :2] = center + spec.amplitude * prof[:, None] * direction[:2]
    roots[:, 2] = spec.base_depth + spec.amplitude * prof * direction[2]
    beta_seq = np.broadcast_to(betas, (T, NUM_BETAS)).copy()
    local = forward_kinematics(poses, beta_seq, template)
    joints = local + roots[:, None, :]
    bad = np.flatnonzero(~np.all(joints[..., 2] > 0, axis=1))
    if bad.size:
        raise InvalidArgument(f"motion puts the hand behind the camera (frame {bad[0]})")
    traj = Trajectory(joints, roots, K, spec.fps, poses, beta_seq)
    kp = perspective_project(joints, K)
    maps = None
    if depth_maps:
        pts, radii = surface_samples(poses, beta_seq, template, samples_per_bone)
        maps = [render_depth(pts[t] + roots[t], radii, K) for t in range(T)]
    return GroundTruth(traj, kp, maps)


def render_depth(points_cam, radii, K: Intrinsics) -> DepthMap:
    """Perspective z-buffer render of camera-frame surface samples."""
    pts = np.asarray(points_cam, dtype=float)
    uv = perspective_project(pts, K)
    half = np.floor(K.f * np.asarray(radii) / pts[:, 2] + 0.5).astype(np.int64)
    return splat_depth(uv, pts[:, 2] - radii, int(K.width), int(K.height), half)


def render_depth_weak(points_local, radii, cam: WeakPerspCam, K: Intrinsics, root_depth: float,
                      half_sizes=0) -> DepthMap:
    """Depth render consistent with the weak camera.

    Each sample lands at its weak-projected pixel with depth
    ``p_z + root_depth - r``; rendering this and solving with
    :func:`~handtraj.lift.lift_depthmap` recovers ``root_depth``.
    """
    from .camera import weak_project

    pts = np.asarray(points_local, dtype=float)
    uv = weak_project(pts, cam, K)
    return splat_depth(uv, pts[:, 2] + root_depth - np.asarray(radii), int(K.width), int(K.height), half_sizes)


def occlude(depth: DepthMap, fraction: float, seed: int = 0) -> DepthMap:
    """Invalidate a random ``fraction`` of the valid pixels."""
    if not 0 <= fraction <= 1:
        raise InvalidArgument(f"occlusion fraction must be in [0, 1], got {fraction}")
    vals = depth.values.copy()
    idx = np.flatnonzero(depth.valid)
    k = int(round(fraction * idx.size))
    drop = philox(seed).permutation(idx)[:k]
    vals.flat[drop] = np.nan
    return DepthMap(vals)


def gt_predictions(traj: Trajectory, keypoints2d=None) -> list[FramePrediction]:
    """Exact per-frame predictions implied by a ground-truth trajectory.

    The weak scale is ``f / z_root`` and ``delta_d`` is measured from frame 0.
    """
    if traj.poses is None or traj.betas is None or traj.intrinsics is None:
        raise InvalidArgument("ground-truth trajectory needs poses, betas and intrinsics")
    f = traj.intrinsics.f
    z0 = traj.roots[0, 2]
    out = []
    for t in range(len(traj)):
        x, y, z = traj.roots[t]
        out.append(FramePrediction(
            pose=HandPose(traj.poses[t, 0], traj.poses[t, 1:]),
            shape=HandShape(traj.betas[t]),
            cam=WeakPerspCam(f / z, x, y),
            delta_d=0.0 if t == 0 else z - z0,
            keypoints2d=None if keypoints2d is None else np.asarray(keypoints2d[t], dtype=float),
        ))
    return out


def perturb(predictions: Sequence[FramePrediction], noise: NoiseSpec) -> list[FramePrediction]:
    """Add seeded noise: relative scale error, depth-change jitter, pose and pixel noise.

    Draw order is fixed (scale, depth, pose, pixel) and independent of which
    sigmas are zero. Frame 0 keeps ``delta_d = 0``.
    """
    T = len(predictions)
    rng = philox(noise.seed)
    eps = noise.scale_rel_sigma * rng.standard_normal(T)
    dd = noise.depth_sigma * rng.standard_normal(T)
    dpose = noise.pose_sigma * rng.standard_normal((T, 16, 3))
    dpix = noise.pixel_sigma * rng.standard_normal((T, 21, 2))
    if np.any(1.0 + eps <= 0):
        raise InvalidArgument("scale noise produced a non-positive scale; lower scale_rel_sigma")
    out = []
    for t, p in enumerate(predictions):
        rots = p.pose.rotations() + dpose[t]
        kp = None if p.keypoints2d is None else p.keypoints2d + dpix[t]
        out.append(FramePrediction(
            pose=HandPose(rots[0], rots[1:]),
            shape=p.shape,
            cam=WeakPerspCam(p.cam.s * (1.0 + eps[t]), p.cam.tx, p.cam.ty),
            delta_d=0.0 if t == 0 else p.delta_d + dd[t],
            keypoints2d=kp,
        ))
    return out


def observed_keypoints(predictions: Sequence[FramePrediction]) -> np.ndarray:
    kps = [p.keypoints2d for p in predictions]
    if any(k is None for k in kps):
        raise InvalidArgument("some predictions carry no 2D keypoints")
    return np.stack(kps)


def depth_jitter(traj: Trajectory, sigma: float, seed: int = 0) -> Trajectory:
    """Copy of ``traj`` with iid Gaussian noise added to each frame's root depth."""
    noise = sigma * philox(seed).standard_normal(len(traj))
    roots = traj.roots.copy()
    roots[:, 2] += noise
    return traj.with_roots(roots)


def sensitivity_table(focals: Sequence[float], eps_values: Sequence[float], s: float) -> np.ndarray:
    """Depth error (meters) for every (focal length, relative scale error) pair."""
    from .camera import wtf_depth_sensitivity

    f = np.asarray(focals, dtype=float)[:, None]
    e = np.asarray(eps_values, dtype=float)[None, :]
    return wtf_depth_sensitivity(f, s, e) * np.ones((f.shape[0], e.shape[1]))


def is_finite_number(x) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)
