"""Test-time trajectory refinement and the supervised training losses.

Refinement objective (all terms are means, never sums):

* reprojection: mean L1 pixel error between projected joints and 2D keypoints;
* acceleration: mean squared norm of joint second differences in mm^2/frame^4,
  optionally plus the same on projected 2D keypoints in px^2/frame^4;
* anchor: mean squared root displacement from the initial prediction in mm^2,
  plus mean squared pose change in rad^2 when poses are refined.

Decision variables are offsets from the initial prediction: per-frame root
translation in meters and, optionally, per-joint axis-angle deltas. They are
updated with Adam plus decoupled weight decay, so weight decay pulls the
trajectory back towards the initial prediction.

The adversarial prior ``(D(theta, beta) - 1)^2`` used during network training
needs a learned discriminator and is not provided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .camera import Intrinsics, perspective_project
from .errors import BehindCamera, DivergenceError, InvalidArgument, SequenceTooShort
from .kinematics import (
    HandTemplate,
    NUM_JOINTS,
    PARENTS,
    ROTATED_JOINTS,
    default_template,
    forward_kinematics_full,
    so3_left_jacobian,
)
from .lift import Trajectory
from .metrics import M_TO_MM, second_difference

# residuals below this many pixels count as zero when choosing the L1 subgradient
L1_DEADZONE = 1e-9


def _descendants():
    children = {j: [] for j in range(NUM_JOINTS)}
    for j in range(1, NUM_JOINTS):
        children[int(PARENTS[j])].append(j)
    out = {}
    for j in range(NUM_JOINTS):
        stack, seen = list(children[j]), []
        while stack:
            c = stack.pop()
            seen.append(c)
            stack.extend(children[c])
        out[j] = np.array(sorted(seen), dtype=int)
    return out


_DESCENDANTS = _descendants()


@dataclass(frozen=True)
class TTOConfig:
    iterations: int = 1000
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    weights: tuple = (1.0, 100.0, 10.0)  # (reprojection, acceleration, anchor)
    refine_pose: bool = False
    accel_2d: bool = False
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgument("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidArgument("learning rate must be positive")
        if self.weight_decay < 0:
            raise InvalidArgument("weight decay must be non-negative")
        w = tuple(float(v) for v in self.weights)
        if len(w) != 3 or any(v < 0 for v in w) or not any(v > 0 for v in w):
            raise InvalidArgument(f"loss weights must be 3 non-negative values, not all zero: {self.weights}")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    reproj: float
    accel: float
    anchor: float


@dataclass
class TTOInputs:
    """Fixed data of one refinement problem."""

    init: Trajectory
    gt2d: np.ndarray
    intrinsics: Intrinsics
    template: HandTemplate | None = None

    def __post_init__(self):
        self.gt2d = np.asarray(self.gt2d, dtype=float)
        if self.gt2d.shape != (len(self.init), NUM_JOINTS, 2):
            raise InvalidArgument(f"2D keypoints must be ({len(self.init)}, 21, 2), got {self.gt2d.shape}")
        if self.template is None:
            self.template = default_template()

    @property
    def n_frames(self) -> int:
        return len(self.init)


@dataclass
class OptimState:
    """Offsets from the initial prediction plus Adam moments."""

    x: np.ndarray
    m: np.ndarray = None
    v: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.m is None:
            self.m = np.zeros_like(self.x)
        if self.v is None:
            self.v = np.zeros_like(self.x)


def n_variables(n_frames: int, config: TTOConfig) -> int:
    return n_frames * (3 + (48 if config.refine_pose else 0))


def initial_state(inputs: TTOInputs, config: TTOConfig) -> OptimState:
    return OptimState(np.zeros(n_variables(inputs.n_frames, config)))


def _split(x, T, config):
    roots = x[: 3 * T].reshape(T, 3)
    pose = x[3 * T:].reshape(T, 16, 3) if config.refine_pose else None
    return roots, pose


def _forward(x, inputs: TTOInputs, config: TTOConfig):
    T = inputs.n_frames
    d_root, d_pose = _split(x, T, config)
    init = inputs.init
    roots = init.roots + d_root
    if config.refine_pose:
        if init.poses is None or init.betas is None:
            raise InvalidArgument("pose refinement needs poses and betas on the initial trajectory")
        rots = init.poses + d_pose
        local, G = forward_kinematics_full(rots, init.betas, inputs.template)
    else:
        rots, local, G = None, init.local_joints, None
    return roots, d_root, d_pose, rots, local, G


def _projection_grad(J, g2, f):
    """Pull a pixel-space gradient (T, 21, 2) back onto camera-frame joints."""
    z = J[..., 2]
    gx = g2[..., 0] * f / z
    gy = g2[..., 1] * f / z
    gz = -(g2[..., 0] * J[..., 0] + g2[..., 1] * J[..., 1]) * f / z**2
    return np.stack([gx, gy, gz], axis=-1)


def _second_diff_adjoint(gA, T):
    g = np.zeros((T,) + gA.shape[1:])
    g[:-2] += gA
    g[1:-1] -= 2.0 * gA
    g[2:] += gA
    return g


def _evaluate(x, inputs: TTOInputs, config: TTOConfig, want_grad: bool):
    T = inputs.n_frames
    K = inputs.intrinsics
    w_r, w_a, w_n = config.weights
    roots, d_root, d_pose, rots, local, G = _forward(x, inputs, config)
    J = local + roots[:, None, :]
    P = perspective_project(J, K)
    gJ = np.zeros_like(J)
    gP = np.zeros_like(P)

    r = P - inputs.gt2d
    reproj = float(np.mean(np.abs(r)))
    if want_grad and w_r:
        gP += w_r * np.sign(r) * (np.abs(r) > L1_DEADZONE) / r.size

    accel = 0.0
    if w_a:
        if T < 3:
            raise SequenceTooShort(f"acceleration term needs >= 3 frames, got {T}")
        A = second_difference(J * M_TO_MM)
        n = A.shape[0] * A.shape[1]
        accel = float(np.sum(A**2) / n)
        if want_grad:
            gJ += w_a * M_TO_MM * _second_diff_adjoint(2.0 * A / n, T)
        if config.accel_2d:
            A2 = second_difference(P)
            accel += float(np.sum(A2**2) / n)
            if want_grad:
                gP += w_a * _second_diff_adjoint(2.0 * A2 / n, T)

    D = d_root * M_TO_MM
    anchor = float(np.mean(D**2))
    if config.refine_pose:
        anchor += float(np.mean(d_pose**2))
    total = w_r * reproj + w_a * accel + w_n * anchor
    parts = LossBreakdown(total, reproj, accel, anchor)
    if not want_grad:
        return parts, None

    gJ += _projection_grad(J, gP, K.f)
    g_root = gJ.sum(axis=1) + w_n * 2.0 * M_TO_MM * D / D.size
    if not config.refine_pose:
        return parts, g_root.ravel()

    g_pose = w_n * 2.0 * d_pose / d_pose.size
    Jl = so3_left_jacobian(rots)
    for k, jk in enumerate(ROTATED_JOINTS):
        desc = _DESCENDANTS[int(jk)]
        arm = local[:, desc, :] - local[:, jk, None, :]
        torque = np.cross(arm, gJ[:, desc, :]).sum(axis=1)
        if jk != 0:
            torque = np.einsum("tba,tb->ta", G[:, PARENTS[jk]], torque)
        g_pose[:, k] += np.einsum("tba,tb->ta", Jl[:, k], torque)
    return parts, np.concatenate([g_root.ravel(), g_pose.ravel()])


def _x(state):
    return state.x if isinstance(state, OptimState) else np.asarray(state, dtype=float)


def tto_loss(state, inputs: TTOInputs, config: TTOConfig) -> LossBreakdown:
    return _evaluate(_x(state), inputs, config, want_grad=False)[0]


def grad_tto_loss(state, inputs: TTOInputs, config: TTOConfig) -> np.ndarray:
    """Analytic gradient of the total loss w.r.t. the flat decision vector.

    Layout: root offsets (T*3, meters) then, with pose refinement, axis-angle
    deltas (T*48, radians).
    """
    return _evaluate(_x(state), inputs, config, want_grad=True)[1]


def loss_and_grad(state, inputs: TTOInputs, config: TTOConfig):
    return _evaluate(_x(state), inputs, config, want_grad=True)


def state_trajectory(state, inputs: TTOInputs, config: TTOConfig) -> Trajectory:
    roots, _, _, rots, local, _ = _forward(_x(state), inputs, config)
    poses = rots if config.refine_pose else inputs.init.poses
    return replace(inputs.init, joints=local + roots[:, None, :], roots=roots, poses=poses)


def adamw_step(state: OptimState, grad: np.ndarray, config: TTOConfig) -> OptimState:
    """One Adam step with bias correction and decoupled weight decay."""
    b1, b2 = config.adam_betas
    lr = config.learning_rate
    t = state.step + 1
    x = state.x * (1.0 - lr * config.weight_decay)
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad**2
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    x = x - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return OptimState(x, m, v, t)


def refine(init: Trajectory, gt2d, intrinsics: Intrinsics, config: TTOConfig = TTOConfig(),
           template: HandTemplate | None = None):
    """Refine a trajectory against 2D keypoints.

    Returns the refined trajectory and the loss history, one entry before
    each step plus one for the final state (``iterations + 1`` entries). If
    the final loss ends above the initial loss the initial trajectory is
    returned, so the final total never exceeds the first.
    """
    inputs = TTOInputs(init, gt2d, intrinsics, template)
    state = initial_state(inputs, config)
    history = []
    for it in range(config.iterations + 1):
        try:
            parts, grad = loss_and_grad(state, inputs, config)
        except BehindCamera as exc:
            raise BehindCamera(f"{exc} (iteration {it})") from None
        if not (math.isfinite(parts.total) and np.all(np.isfinite(grad))):
            raise DivergenceError(f"non-finite loss or gradient at iteration {it}")
        history.append(parts)
        if it == config.iterations:
            break
        state = adamw_step(state, grad, config)
    if history[-1].total > history[0].total:
        history[-1] = history[0]
        return init, history
    return state_trajectory(state, inputs, config), history


def loss_reprojection(traj: Trajectory, gt2d, intrinsics: Intrinsics) -> float:
    """Mean absolute pixel error over frames, joints and both coordinates."""
    return float(np.mean(np.abs(perspective_project(traj.joints, intrinsics) - np.asarray(gt2d))))


def loss_acceleration(traj: Trajectory) -> float:
    """Mean over interior frames and joints of the squared second difference norm, mm^2."""
    if len(traj) < 3:
        raise SequenceTooShort(f"acceleration needs >= 3 frames, got {len(traj)}")
    A = second_difference(traj.joints * M_TO_MM)
    return float(np.mean(np.sum(A**2, axis=-1)))


def loss_anchor(traj: Trajectory, init: Trajectory, include_pose: bool = False) -> float:
    if len(traj) != len(init):
        raise InvalidArgument(f"trajectory has {len(traj)} frames, initial has {len(init)}")
    out = float(np.mean(((traj.roots - init.roots) * M_TO_MM) ** 2))
    if include_pose:
        if traj.poses is None or init.poses is None:
            raise InvalidArgument("pose anchor needs poses on both trajectories")
        out += float(np.mean((traj.poses - init.poses) ** 2))
    return out


@dataclass(frozen=True)
class TrainingLosses:
    l4d: float
    l3d: float
    l2d: float

    def __iter__(self):
        return iter((self.l4d, self.l3d, self.l2d))


def training_losses(pred: Trajectory, gt: Trajectory, pred2d=None, gt2d=None) -> TrainingLosses:
    """Window supervision losses, means over all entries, 3D terms in meters.

    L4D compares camera-frame joints after subtracting each trajectory's
    first-frame root joint. L3D combines local joints (L1) with pose and shape
    parameters (squared). L2D is the L1 keypoint error; keypoints default to
    projections with each trajectory's intrinsics.
    """
    if len(pred) != len(gt):
        raise InvalidArgument(f"windows differ in length: {len(pred)} vs {len(gt)}")
    if pred.poses is None or gt.poses is None or pred.betas is None or gt.betas is None:
        raise InvalidArgument("training losses need poses and betas on both windows")
    pa = pred.joints - pred.joints[0, 0]
    ga = gt.joints - gt.joints[0, 0]
    l4d = float(np.mean(np.abs(pa - ga)))
    l3d = float(
        np.mean(np.abs(pred.local_joints - gt.local_joints))
        + np.mean((pred.poses - gt.poses) ** 2)
        + np.mean((pred.betas - gt.betas) ** 2)
    )
    if pred2d is None:
        pred2d = perspective_project(pred.joints, pred.intrinsics)
    if gt2d is None:
        gt2d = perspective_project(gt.joints, gt.intrinsics)
    pred2d, gt2d = np.asarray(pred2d, dtype=float), np.asarray(gt2d, dtype=float)
    if pred2d.shape != gt2d.shape:
        raise InvalidArgument("2D keypoint shapes differ")
    l2d = float(np.mean(np.abs(pred2d - gt2d)))
    return TrainingLosses(l4d, l3d, l2d)
