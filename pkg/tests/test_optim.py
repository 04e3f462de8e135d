import numpy as np
import pytest

from handtraj.camera import Intrinsics, perspective_project
from handtraj.errors import BehindCamera, DivergenceError, InvalidArgument, SequenceTooShort
from handtraj.kinematics import forward_kinematics
from handtraj.lift import Trajectory
from handtraj.optim import (
    OptimState,
    TTOConfig,
    TTOInputs,
    adamw_step,
    grad_tto_loss,
    loss_acceleration,
    loss_anchor,
    loss_reprojection,
    refine,
    state_trajectory,
    training_losses,
    tto_loss,
)

from conftest import rng
from oracles import central_difference, loss_terms, max_relative_error, random_problem

K = Intrinsics(800.0, 320.0, 240.0, 640.0, 480.0)


def _traj(T=6, seed=0, motion="linear"):
    g = rng(seed)
    poses = g.normal(0, 0.3, (T, 16, 3))
    poses[:] = poses[0]
    betas = np.tile(g.normal(size=10), (T, 1))
    t = np.arange(T)[:, None]
    roots = np.array([0.01, -0.02, 0.5]) + (t * [0.004, 0.002, 0.003] if motion == "linear" else 0 * t)
    return Trajectory(forward_kinematics(poses, betas) + roots[:, None], roots, K, 30.0, poses, betas)


def test_reprojection_examples():
    tr = _traj(1)
    gt2d = perspective_project(tr.joints, K)
    assert loss_reprojection(tr, gt2d, K) == 0.0
    off = gt2d.copy()
    off[0, 7] += [3.0, 4.0]
    assert abs(loss_reprojection(tr, off, K) - 7.0 / 42.0) < 1e-12


def test_reprojection_invariant_along_rays():
    tr = _traj(2)
    gt2d = perspective_project(tr.joints, K) + 1.0
    joints = tr.joints.copy()
    joints[1, 4] *= 1.7
    moved = Trajectory(joints, tr.roots, K)
    assert abs(loss_reprojection(moved, gt2d, K) - loss_reprojection(tr, gt2d, K)) < 1e-12


def test_acceleration_examples():
    tr = _traj(7)
    assert loss_acceleration(tr) < 1e-18
    delta = np.array([0.001, -0.002, 0.0005])
    j = tr.joints.copy()
    j[3] += delta
    bumped = Trajectory(j, tr.roots, K)
    # second differences pick up (d, -2d, d) at interior frames 2, 3, 4; in mm
    d = delta * 1000
    expected = (np.sum(d**2) * (1 + 4 + 1) * 21) / (5 * 21)
    assert abs(loss_acceleration(bumped) - expected) < 1e-9
    with pytest.raises(SequenceTooShort):
        loss_acceleration(_traj(2))


def test_acceleration_ignores_linear_drift():
    g = rng(1)
    tr = Trajectory(g.normal(0, 0.01, (8, 21, 3)) + [0, 0, 0.5], np.zeros((8, 3)) + [0, 0, 0.5], K)
    t = np.arange(8)[:, None, None]
    drifted = Trajectory(tr.joints + 0.01 * t * [1, -2, 0.5], tr.roots, K)
    assert abs(loss_acceleration(drifted) - loss_acceleration(tr)) < 1e-9


def test_anchor_examples():
    tr = _traj(4)
    assert loss_anchor(tr, tr) == 0.0
    assert abs(loss_anchor(tr.translated([0.002, 0.002, 0.002]), tr) - 4.0) < 1e-9
    g = rng(2)
    roots = tr.roots + g.normal(0, 0.01, tr.roots.shape)
    direct = np.mean(((roots - tr.roots) * 1000) ** 2)
    assert abs(loss_anchor(tr.with_roots(roots), tr) - direct) < 1e-9


def test_tto_loss_parts_and_weights():
    inputs, cfg, x = random_problem(3)
    parts = tto_loss(x, inputs, cfg)
    w = cfg.weights
    assert abs(parts.total - (w[0] * parts.reproj + w[1] * parts.accel + w[2] * parts.anchor)) <= 1e-12 * parts.total
    assert abs(parts.total - loss_terms(x, inputs.init, inputs.gt2d, inputs.intrinsics, cfg).sum()) < 1e-9 * parts.total
    traj = state_trajectory(x, inputs, cfg)
    assert abs(parts.reproj - loss_reprojection(traj, inputs.gt2d, inputs.intrinsics)) < 1e-12
    assert abs(parts.accel - loss_acceleration(traj)) < 1e-9 * parts.accel
    assert abs(parts.anchor - loss_anchor(traj, inputs.init)) < 1e-9 * parts.anchor
    only = TTOConfig(weights=(1, 0, 0))
    assert tto_loss(x, inputs, only).total == parts.reproj


def test_zero_noise_static_input_is_a_minimum():
    tr = _traj(6, motion="static")
    inputs = TTOInputs(tr, perspective_project(tr.joints, K), K)
    cfg = TTOConfig()
    x = np.zeros(18)
    assert tto_loss(x, inputs, cfg).total == 0.0
    assert np.linalg.norm(grad_tto_loss(x, inputs, cfg)) < 1e-10


def test_anchor_only_gradient():
    inputs, _, x = random_problem(4)
    cfg = TTOConfig(weights=(0, 0, 1))
    np.testing.assert_allclose(grad_tto_loss(x, inputs, cfg), 2e6 * x / x.size, rtol=1e-12)


def _termwise(inputs, cfg):
    def diff(a, b):
        return np.sum(loss_terms(a, inputs.init, inputs.gt2d, inputs.intrinsics, cfg)
                      - loss_terms(b, inputs.init, inputs.gt2d, inputs.intrinsics, cfg))
    return diff


@pytest.mark.parametrize("accel_2d", [False, True])
def test_root_gradient_matches_central_difference(accel_2d):
    # each loss term is differenced before summing, so cancellation in the
    # large total does not swamp small gradient coordinates
    for seed in range(10):
        inputs, cfg, x = random_problem(seed, accel_2d=accel_2d)
        g = grad_tto_loss(x, inputs, cfg)
        fd = central_difference(_termwise(inputs, cfg), x, 1e-6)
        assert max_relative_error(g, fd) < 1e-5


@pytest.mark.parametrize("accel_2d", [False, True])
def test_pose_gradient_matches_central_difference(accel_2d):
    for seed in range(6):
        inputs, cfg, x = random_problem(seed, refine_pose=True, accel_2d=accel_2d, offset_sigma=2e-3)
        g = grad_tto_loss(x, inputs, cfg)
        fd = central_difference(_termwise(inputs, cfg), x, 1e-6)
        assert max_relative_error(g, fd) < 1e-5


def test_adamw_first_step():
    cfg = TTOConfig(learning_rate=0.01, weight_decay=0.1)
    st = OptimState(np.array([1.0, -2.0, 0.5]))
    g = np.array([0.3, -4.0, 0.0])
    out = adamw_step(st, g, cfg)
    # bias-corrected first step moves by lr * g / (|g| + eps)
    expected = st.x * (1 - 0.01 * 0.1) - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(out.x, expected, rtol=1e-12)
    assert out.step == 1
    np.testing.assert_allclose(out.m, 0.1 * g)
    np.testing.assert_allclose(out.v, 0.001 * g**2)


def test_refine_keeps_optimal_input():
    tr = _traj(6, motion="linear")
    out, hist = refine(tr, perspective_project(tr.joints, K), K, TTOConfig(iterations=100))
    assert np.max(np.abs(out.roots - tr.roots)) < 1e-6
    assert len(hist) == 101


def test_refine_contract_and_determinism():
    inputs, cfg, _ = random_problem(5, T=8)
    cfg = TTOConfig(iterations=150)
    a, ha = refine(inputs.init, inputs.gt2d, inputs.intrinsics, cfg)
    b, hb = refine(inputs.init, inputs.gt2d, inputs.intrinsics, cfg)
    assert ha[-1].total <= ha[0].total
    assert np.array_equal(a.joints, b.joints)
    assert [h.total for h in ha] == [h.total for h in hb]


def test_refine_with_pose_reduces_loss():
    inputs, _, _ = random_problem(6, T=6)
    _, hist = refine(inputs.init, inputs.gt2d, inputs.intrinsics, TTOConfig(iterations=100, refine_pose=True))
    assert hist[-1].total < hist[0].total


def test_refine_errors():
    tr = _traj(4)
    gt2d = perspective_project(tr.joints, K)
    bad = gt2d.copy()
    bad[0, 0, 0] = np.inf
    with pytest.raises(DivergenceError, match="iteration 0"):
        refine(tr, bad, K, TTOConfig(iterations=5))
    behind = tr.translated([0, 0, -0.6])
    with pytest.raises(BehindCamera, match="iteration"):
        refine(behind, gt2d, K, TTOConfig(iterations=5))
    with pytest.raises(InvalidArgument):
        TTOConfig(weights=(0, 0, 0))
    with pytest.raises(InvalidArgument):
        refine(tr, gt2d[:2], K)


def test_training_losses():
    tr = _traj(5, seed=3)
    assert tuple(training_losses(tr, tr)) == (0.0, 0.0, 0.0)
    shifted = tr.translated([0.1, -0.05, 0.2])
    assert training_losses(shifted, tr).l4d < 1e-15
    g = rng(9)
    poses = tr.poses + g.normal(0, 0.05, tr.poses.shape)
    betas = tr.betas + g.normal(0, 0.1, tr.betas.shape)
    roots = tr.roots + g.normal(0, 0.01, tr.roots.shape)
    pred = Trajectory(forward_kinematics(poses, betas) + roots[:, None], roots, K, 30.0, poses, betas)
    l4d, l3d, l2d = training_losses(pred, tr)
    pa = pred.joints - pred.joints[0, 0]
    ga = tr.joints - tr.joints[0, 0]
    assert abs(l4d - np.abs(pa - ga).mean()) < 1e-15
    direct3d = (np.abs(pred.joints - roots[:, None] - (tr.joints - tr.roots[:, None])).mean()
                + ((poses - tr.poses) ** 2).mean() + ((betas - tr.betas) ** 2).mean())
    assert abs(l3d - direct3d) < 1e-15
    direct2d = np.abs(perspective_project(pred.joints, K) - perspective_project(tr.joints, K)).mean()
    assert abs(l2d - direct2d) < 1e-12


def test_refine_smooths_jittery_ground_truth():
    from handtraj.metrics import acc_norm, ga_mpjpe
    from handtraj.synth import MotionSpec, depth_jitter, generate_gt

    gt = generate_gt(MotionSpec(length=60, seed=3), K, depth_maps=False)
    init = depth_jitter(gt.trajectory, 0.03, seed=7)
    out, _ = refine(init, gt.keypoints2d, K)
    assert acc_norm(out, gt.trajectory) < acc_norm(init, gt.trajectory)
    assert ga_mpjpe(out, gt.trajectory) <= 1.10 * ga_mpjpe(init, gt.trajectory)
