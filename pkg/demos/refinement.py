"""
Test-time refinement smooths, it does not relocate
==================================================

Refinement adjusts per-frame root offsets to balance three terms: 2D
reprojection error, 3D acceleration and distance to the initial guess.

Two inputs are refined here:

1. ground truth with 30 mm of independent depth jitter per frame, which the
   acceleration term removes;
2. weak-to-full lifting with 6% scale noise at a long focal length. Its
   depth error is also per-frame, but each frame's 2D keypoints still fit
   the wrong depth, so the smoothed trajectory stays far from the truth.
"""

import time

from handtraj.camera import Intrinsics
from handtraj.lift import lift_depth_change, lift_wtf
from handtraj.metrics import acc_norm, ga_mpjpe
from handtraj.optim import TTOConfig, refine
from handtraj.synth import MotionSpec, NoiseSpec, depth_jitter, generate_gt, gt_predictions, perturb

cfg = TTOConfig()  # 1000 AdamW steps, lr 1e-3, weights (1, 100, 10)

K = Intrinsics(800.0, 320.0, 240.0, 640.0, 480.0)
gt = generate_gt(MotionSpec(length=60, seed=3), K, depth_maps=False)
init = depth_jitter(gt.trajectory, 0.03, seed=7)
t0 = time.perf_counter()
out, hist = refine(init, gt.keypoints2d, K, cfg)
print(f"jittered ground truth ({time.perf_counter() - t0:.2f} s, loss {hist[0].total:.1f} -> {hist[-1].total:.1f})")
for name, tr in (("before", init), ("after", out)):
    print(f"  {name:7s} ACC-NORM {acc_norm(tr, gt.trajectory):7.2f}   GA-MPJPE {ga_mpjpe(tr, gt.trajectory):7.2f}")

K5 = Intrinsics(5000.0, 320.0, 240.0, 640.0, 480.0)
gt5 = generate_gt(MotionSpec(length=60, seed=0), K5, depth_maps=False)
G5 = gt5.trajectory
preds = perturb(gt_predictions(G5), NoiseSpec(0.06, 0.1 * 0.06 * G5.roots[0, 2], seed=100))
wtf = lift_wtf(preds, K5, fps=6.0)
dc = lift_depth_change(preds, G5.roots[0, 2], K5, fps=6.0)
out5, _ = refine(wtf, gt5.keypoints2d, K5, cfg)
print("\nweak-to-full at f = 5000 px")
for name, tr in (("wtf", wtf), ("refined", out5), ("depth change", dc)):
    print(f"  {name:13s} ACC-NORM {acc_norm(tr, G5):7.2f}   GA-MPJPE {ga_mpjpe(tr, G5):7.2f}")
