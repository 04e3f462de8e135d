import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from handtraj.camera import Intrinsics, back_project, wtf_depth_sensitivity
from handtraj.errors import InvalidArgument
from handtraj.lift import lift_depth_change, lift_depthmap, lift_wtf
from handtraj.kinematics import surface_samples
from handtraj.synth import (
    MotionSpec,
    NoiseSpec,
    depth_jitter,
    generate_gt,
    gt_predictions,
    motion_profile,
    observed_keypoints,
    occlude,
    perturb,
    render_depth_weak,
    sensitivity_table,
)

K = Intrinsics(800.0, 160.0, 120.0, 320.0, 240.0)


def test_generation_is_deterministic():
    spec = MotionSpec(kind="sinusoidal", length=12, seed=4)
    a, b = generate_gt(spec, K), generate_gt(spec, K)
    assert np.array_equal(a.trajectory.joints, b.trajectory.joints)
    assert np.array_equal(a.keypoints2d, b.keypoints2d)
    for x, y in zip(a.depth_maps, b.depth_maps):
        assert np.array_equal(x.values, y.values, equal_nan=True)
    c = generate_gt(MotionSpec(kind="sinusoidal", length=12, seed=5), K, depth_maps=False)
    assert not np.array_equal(a.trajectory.joints, c.trajectory.joints)


def test_static_frames_identical():
    gt = generate_gt(MotionSpec(kind="static", length=5), K, depth_maps=False)
    assert np.all(gt.trajectory.joints == gt.trajectory.joints[0])


@pytest.mark.parametrize("length", [2, 7, 60])
def test_reach_and_retract_closes(length):
    gt = generate_gt(MotionSpec(length=length, seed=2), K, depth_maps=False)
    j = gt.trajectory.joints
    assert np.max(np.abs(j[-1] - j[0])) < 1e-9
    if length > 2:
        assert np.max(np.abs(j[length // 2] - j[0])) > 0.05


def test_motion_profiles():
    assert motion_profile(MotionSpec(kind="linear", length=5)).tolist() == [0, 0.25, 0.5, 0.75, 1]
    sin = motion_profile(MotionSpec(kind="sinusoidal", period=4, length=5))
    np.testing.assert_allclose(sin, [0, 1, 0, -1, 0], atol=1e-15)
    assert motion_profile(MotionSpec(length=1)).tolist() == [0.0]


def test_keypoints_back_project_to_joints():
    gt = generate_gt(MotionSpec(kind="sinusoidal", length=10, seed=6), K, depth_maps=False)
    j = gt.trajectory.joints
    rec = back_project(gt.keypoints2d, j[..., 2], K)
    assert np.max(np.abs(rec - j)) < 1e-9


def test_depth_maps_see_the_hand():
    gt = generate_gt(MotionSpec(kind="static", length=1, base_depth=0.5), K)
    dm = gt.depth_maps[0]
    assert dm.values.shape == (240, 320)
    vals = dm.values[dm.valid]
    z = gt.trajectory.joints[0, :, 2]
    assert vals.size > 50
    assert z.min() - 0.03 < vals.min() and vals.max() < z.max()


def test_spec_validation_and_behind_camera():
    for bad in (dict(amplitude=-1), dict(period=1), dict(base_depth=0), dict(length=0), dict(kind="spin")):
        with pytest.raises(InvalidArgument):
            MotionSpec(**bad)
    with pytest.raises(InvalidArgument):
        NoiseSpec(pixel_sigma=-1)
    with pytest.raises(InvalidArgument, match="behind"):
        generate_gt(MotionSpec(kind="linear", amplitude=2.0, direction=(0, 0, -1), base_depth=0.5), K, depth_maps=False)


def test_zero_noise_lift_reproduces_gt():
    gt = generate_gt(MotionSpec(kind="reach-and-retract", length=30, seed=8), K, depth_maps=False)
    preds = perturb(gt_predictions(gt.trajectory, gt.keypoints2d), NoiseSpec())
    tr = lift_depth_change(preds, gt.trajectory.roots[0, 2], K, fps=6.0)
    assert np.max(np.abs(tr.joints - gt.trajectory.joints)) < 1e-9
    assert np.array_equal(observed_keypoints(preds), gt.keypoints2d)
    wtf = lift_wtf(preds, K, fps=6.0)
    assert np.max(np.abs(wtf.joints - gt.trajectory.joints)) < 1e-9


def test_perturb_determinism_and_first_frame():
    gt = generate_gt(MotionSpec(kind="linear", length=8), K, depth_maps=False)
    preds = gt_predictions(gt.trajectory, gt.keypoints2d)
    noise = NoiseSpec(0.05, 0.01, 0.02, 1.5, seed=3)
    a, b = perturb(preds, noise), perturb(preds, noise)
    assert all(x.cam.s == y.cam.s and x.delta_d == y.delta_d for x, y in zip(a, b))
    assert a[0].delta_d == 0.0
    assert a[3].delta_d != preds[3].delta_d


def test_scale_noise_matches_sensitivity_closed_form():
    # first-order propagation: std(depth error) = (f / s) * sigma
    T, sigma, z = 1000, 0.06, 0.6
    gt = generate_gt(MotionSpec(kind="static", length=T, base_depth=z), K, depth_maps=False)
    preds = perturb(gt_predictions(gt.trajectory), NoiseSpec(scale_rel_sigma=sigma, seed=21))
    err = lift_wtf(preds, K).roots[:, 2] - gt.trajectory.roots[:, 2]
    s = K.f / z
    expected = (K.f / s) * sigma
    assert abs(np.std(err) / expected - 1) < 0.10
    # each frame's error is exactly the sensitivity at its own scale error
    eps = np.array([p.cam.s for p in preds]) / s - 1
    np.testing.assert_allclose(-err, wtf_depth_sensitivity(K.f, s, eps), atol=1e-12)


def test_pixel_noise_only_touches_2d():
    gt = generate_gt(MotionSpec(kind="sinusoidal", length=6), K, depth_maps=False)
    preds = gt_predictions(gt.trajectory, gt.keypoints2d)
    noisy = perturb(preds, NoiseSpec(pixel_sigma=2.0))
    a = lift_depth_change(noisy, gt.trajectory.roots[0, 2], K)
    assert np.max(np.abs(a.joints - gt.trajectory.joints)) < 1e-12
    d = observed_keypoints(noisy) - gt.keypoints2d
    assert 1.5 < d.std() < 2.5


def test_depth_jitter():
    gt = generate_gt(MotionSpec(kind="static", length=500), K, depth_maps=False)
    j = depth_jitter(gt.trajectory, 0.03, seed=2)
    dz = j.roots[:, 2] - gt.trajectory.roots[:, 2]
    assert abs(dz.std() - 0.03) < 0.003
    np.testing.assert_allclose(j.joints - gt.trajectory.joints, np.broadcast_to(dz[:, None, None] * [0, 0, 1], j.joints.shape), atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.3, 1.2), st.integers(0, 999), st.sampled_from([0.0, 0.4]))
def test_weak_render_round_trip(depth, seed, frac):
    gt = generate_gt(MotionSpec(kind="static", length=1, seed=seed), K, depth_maps=False)
    tr = gt.trajectory
    pts, radii = surface_samples(tr.poses, tr.betas, samples_per_bone=3)
    cam = gt_predictions(tr)[0].cam
    dm = occlude(render_depth_weak(pts[0], radii, cam, K, depth), frac, seed)
    assert abs(lift_depthmap(pts[0], radii, cam, K, dm)[2] - depth) < 1e-6


def test_sensitivity_table():
    tab = sensitivity_table([500, 1000, 5000], [0.0, 0.03, 0.06], 1000.0)
    assert tab.shape == (3, 3)
    assert np.all(tab[:, 0] == 0)
    np.testing.assert_allclose(tab[:, 2] / tab[0, 2], [1, 2, 10])
    assert abs(tab[2, 2] - 5.0 * 0.06 / 1.06) < 1e-15
