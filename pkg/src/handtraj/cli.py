"""Command-line entry point: ``python -m handtraj <command>``.

Exit status:

====  ==============================================================
0     success
2     usage error (bad flags, missing input file)
3     malformed input file (format, version or unit errors)
4     numeric failure (optimizer divergence)
5     contract violation (invalid values, degenerate geometry, failed check)
====  ==============================================================
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .camera import Intrinsics, default_intrinsics, perspective_project
from .errors import EXIT_CONTRACT, EXIT_OK, EXIT_USAGE, HandTrajError, InvalidArgument
from .io import (
    TrajectoryFile,
    file_from_trajectory,
    read_depth_maps,
    read_trajectory,
    records_from_predictions,
    write_depth_maps,
    write_loss_history,
    write_trajectory,
)
from .kinematics import load_template, surface_samples
from .lift import (
    WindowConfig,
    lift_depth_change,
    lift_depth_change_windowed,
    lift_depthmap,
    lift_depthmap_sequence,
    lift_wtf,
)
from .metrics import DEFAULT_CLIP_LEN, combine_reports, evaluate
from .optim import TTOConfig, refine

METHODS = ("wtf", "wtf-gt", "depthmap", "depth-change")


class UsageError(Exception):
    pass


def _template(args):
    return load_template(args.template) if getattr(args, "template", None) else None


def _weights(text: str):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must be three comma-separated numbers, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("weights must be reprojection,acceleration,anchor")
    return vals


def _d1(text: str):
    if text in ("wtf", "depthmap"):
        return text
    if text.startswith("value:"):
        try:
            return float(text[6:])
        except ValueError:
            pass
    raise argparse.ArgumentTypeError(f"--d1 must be wtf, depthmap or value:<meters>, got {text!r}")


def _float_list(text: str):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _need_intrinsics(tf: TrajectoryFile, what: str) -> Intrinsics:
    if tf.intrinsics is None:
        raise UsageError(f"{what} needs camera intrinsics in the input file")
    return tf.intrinsics


def lift_file(tf: TrajectoryFile, method: str, *, f=None, d1="wtf", depth_maps=None, template=None,
              window=None):
    """Lift the predictions of a trajectory file with one of :data:`METHODS`."""
    preds = tf.predictions()
    K = tf.intrinsics
    common = dict(fps=tf.fps, template=template, frame_ids=tf.frame_ids)
    if method in ("wtf", "wtf-gt"):
        if method == "wtf-gt" or f is not None:
            base = _need_intrinsics(tf, method)
            K_lift = base if f is None else Intrinsics(f, base.cx, base.cy, base.width, base.height)
        else:
            base = _need_intrinsics(tf, "wtf with the default focal length")
            K_lift = default_intrinsics(base.width, base.height)
        traj = lift_wtf(preds, K_lift, **common)
        return traj if K is None else _with_intrinsics(traj, K)
    if method == "depthmap":
        if depth_maps is None:
            raise UsageError("method depthmap needs --depth")
        return lift_depthmap_sequence(preds, depth_maps, _need_intrinsics(tf, method), **common)
    if method == "depth-change":
        if isinstance(d1, float):
            first = d1
        elif d1 == "wtf":
            first = _need_intrinsics(tf, "--d1 wtf").f / preds[0].cam.s
        else:
            if depth_maps is None:
                raise UsageError("--d1 depthmap needs --depth")
            pts, radii = surface_samples(preds[0].pose.rotations(), preds[0].shape.betas, template)
            first = lift_depthmap(pts, radii, preds[0].cam, _need_intrinsics(tf, method), depth_maps[0])[2]
        if window is None:
            return lift_depth_change(preds, first, K, **common)
        return lift_depth_change_windowed(preds, first, window, K, **common)
    raise UsageError(f"unknown method {method!r}")


def _with_intrinsics(traj, K):
    from dataclasses import replace

    return replace(traj, intrinsics=K)


def _write_report(text: str, path):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_synth(args) -> int:
    from .synth import MotionSpec, NoiseSpec, generate_gt, gt_predictions, perturb

    K = Intrinsics(args.f if args.f else float(np.hypot(args.width, args.height)),
                   args.width / 2.0, args.height / 2.0, args.width, args.height)
    spec = MotionSpec(kind=args.kind, amplitude=args.amplitude, period=args.period, base_depth=args.depth,
                      fps=args.fps, length=args.length, seed=args.seed)
    noise = NoiseSpec(args.scale_noise, args.depth_noise, args.pose_noise, args.pixel_noise, args.noise_seed)
    gt = generate_gt(spec, K, template=_template(args), depth_maps=not args.no_depth)
    preds = perturb(gt_predictions(gt.trajectory, gt.keypoints2d), noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(file_from_trajectory(gt.trajectory, keypoints2d=gt.keypoints2d), out / "gt.traj")
    write_trajectory(TrajectoryFile(records_from_predictions(preds), spec.fps, K), out / "pred.traj")
    written = ["gt.traj", "pred.traj"]
    if gt.depth_maps is not None:
        write_depth_maps(gt.depth_maps, out / "depth.htdm")
        written.append("depth.htdm")
    print(f"wrote {', '.join(written)} to {out} ({spec.length} frames, seed {spec.seed}, noise seed {noise.seed})")
    return EXIT_OK


def cmd_lift(args) -> int:
    tf = read_trajectory(args.pred)
    maps = read_depth_maps(args.depth) if args.depth else None
    window = WindowConfig(args.window, args.overlap) if args.window else None
    traj = lift_file(tf, args.method, f=args.f, d1=args.d1, depth_maps=maps, template=_template(args), window=window)
    write_trajectory(file_from_trajectory(traj, tf.predictions()), args.out)
    print(f"lifted {len(traj)} frames with {args.method} -> {args.out}")
    return EXIT_OK


def _eval_one(pred_path, gt_path, args, template):
    tf = read_trajectory(pred_path)
    gt_file = read_trajectory(gt_path)
    gt = gt_file.trajectory(template)
    if len(tf.records) != len(gt):
        raise InvalidArgument(f"{pred_path} has {len(tf.records)} frames but {gt_path} has {len(gt)}")
    maps = read_depth_maps(args.depth) if args.depth else None
    if args.method == "none":
        traj = tf.trajectory(template)
    else:
        traj = lift_file(tf, args.method, f=args.f, d1=args.d1, depth_maps=maps, template=template)
    pred2d = gt2d = None
    if gt_file.keypoints2d() is not None and gt.intrinsics is not None:
        gt2d = gt_file.keypoints2d()
        pred2d = perspective_project(traj.joints, gt.intrinsics)
    return evaluate(traj, gt, clip_len=args.clip_len, pred2d=pred2d, gt2d=gt2d)


def cmd_eval(args) -> int:
    if len(args.pred) != len(args.gt):
        raise UsageError("give one --gt file per --pred file")
    template = _template(args)
    config = {
        "version": __version__, "method": args.method, "clip_len": args.clip_len,
        "f": args.f, "d1": args.d1, "depth": args.depth, "template": args.template,
        "pred": [str(p) for p in args.pred], "gt": [str(g) for g in args.gt],
    }
    pairs = list(zip(args.pred, args.gt))
    if args.parallel > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(args.parallel) as pool:
            reports = list(pool.map(lambda pg: _eval_one(pg[0], pg[1], args, template), pairs))
    else:
        reports = [_eval_one(p, g, args, template) for p, g in pairs]
    report = reports[0] if len(reports) == 1 else combine_reports(reports)
    report.config = dict(config)
    _write_report(report.to_json() + "\n" if args.json else report.to_text(), args.out)
    return EXIT_OK


def cmd_refine(args) -> int:
    tf = read_trajectory(args.input)
    template = _template(args)
    init = tf.trajectory(template)
    gt2d = tf.keypoints2d()
    if args.keypoints:
        gt2d = read_trajectory(args.keypoints).keypoints2d()
    if gt2d is None:
        raise UsageError("refine needs 2D keypoints (kp2d fields) in the input or --keypoints file")
    K = _need_intrinsics(tf, "refine")
    cfg = TTOConfig(iterations=args.iters, learning_rate=args.lr, weight_decay=args.weight_decay,
                    weights=args.weights, refine_pose=args.refine_pose, accel_2d=args.accel_2d)
    traj, history = refine(init, gt2d, K, cfg, template)
    write_trajectory(file_from_trajectory(traj, tf.predictions()), args.out)
    if args.history:
        write_loss_history(history, args.history)
    print(f"initial_total={history[0].total!r}")
    print(f"final_total={history[-1].total!r}")
    print(json.dumps({"iterations": cfg.iterations, "lr": cfg.learning_rate, "weights": list(cfg.weights),
                      "weight_decay": cfg.weight_decay, "refine_pose": cfg.refine_pose,
                      "accel_2d": cfg.accel_2d, "version": __version__}, sort_keys=True))
    return EXIT_OK


def cmd_attn_check(args) -> int:
    from .attention import check_contracts, init_decoder, save_weights

    rep = check_contracts(args.frames, args.tokens, args.dim, args.heads, seed=args.seed)
    sys.stdout.write(rep.to_text())
    if args.save:
        save_weights(init_decoder(args.dim, args.heads, seed=args.seed), args.save)
    return EXIT_OK if rep.ok else EXIT_CONTRACT


def cmd_sensitivity_report(args) -> int:
    from .synth import sensitivity_table

    table = sensitivity_table(args.f, args.eps, args.s)
    header = "f_px," + ",".join(f"eps={e!r}" for e in args.eps)
    rows = [header] + [f"{f!r}," + ",".join(repr(float(v)) for v in row) for f, row in zip(args.f, table)]
    csv_text = "\n".join(rows) + "\n"
    print(f"depth error (m) of weak-to-full for s={args.s!r} px/m")
    width = max(12, *(len(f"eps={e:g}") + 2 for e in args.eps))
    print("f (px)".rjust(10) + "".join(f"eps={e:g}".rjust(width) for e in args.eps))
    for f, row in zip(args.f, table):
        print(f"{f:10g}" + "".join(f"{v:{width}.6f}" for v in row))
    if args.csv:
        Path(args.csv).write_text(csv_text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="handtraj", description="4D hand trajectory lifting, evaluation and refinement")
    p.add_argument("--version", action="version", version=f"handtraj {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic ground-truth / prediction pair")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--kind", default="reach-and-retract", choices=["static", "linear", "sinusoidal", "reach-and-retract"])
    s.add_argument("--amplitude", type=float, default=0.15)
    s.add_argument("--period", type=float, default=30.0)
    s.add_argument("--depth", type=float, default=0.6, help="base root depth in meters")
    s.add_argument("--fps", type=float, default=6.0)
    s.add_argument("--length", type=int, default=60)
    s.add_argument("--width", type=float, default=640.0)
    s.add_argument("--height", type=float, default=480.0)
    s.add_argument("--f", type=float, default=None, help="focal length in pixels (default: image diagonal)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise-seed", type=int, default=1)
    s.add_argument("--scale-noise", type=float, default=0.0)
    s.add_argument("--depth-noise", type=float, default=0.0)
    s.add_argument("--pose-noise", type=float, default=0.0)
    s.add_argument("--pixel-noise", type=float, default=0.0)
    s.add_argument("--no-depth", action="store_true", help="skip depth-map rendering")
    s.add_argument("--template")
    s.set_defaults(func=cmd_synth)

    def lift_flags(q):
        q.add_argument("--method", required=True, choices=METHODS + (("none",) if q.prog.endswith("eval") else ()))
        q.add_argument("--f", type=float, default=None, help="focal length for wtf (default: image diagonal)")
        q.add_argument("--d1", type=_d1, default="wtf", help="first-frame depth: wtf, depthmap or value:<meters>")
        q.add_argument("--depth", help="depth-map container for depthmap lifting")
        q.add_argument("--template")

    lf = sub.add_parser("lift", help="lift per-frame predictions to a camera-frame trajectory")
    lf.add_argument("pred")
    lf.add_argument("--out", required=True)
    lf.add_argument("--window", type=int, default=0, help="window size for windowed depth-change lifting")
    lf.add_argument("--overlap", type=int, default=1)
    lift_flags(lf)
    lf.set_defaults(func=cmd_lift)

    ev = sub.add_parser("eval", help="lift and score predictions against ground truth")
    ev.add_argument("--pred", nargs="+", required=True)
    ev.add_argument("--gt", nargs="+", required=True)
    ev.add_argument("--clip-len", type=int, default=DEFAULT_CLIP_LEN)
    ev.add_argument("--out", default=None, help="report path (default: stdout)")
    ev.add_argument("--json", action="store_true")
    ev.add_argument("--parallel", type=int, default=1, help="evaluate sequences concurrently")
    lift_flags(ev)
    ev.set_defaults(func=cmd_eval)

    r = sub.add_parser("refine", help="test-time refinement against 2D keypoints")
    r.add_argument("input", help="trajectory file with roots and kp2d")
    r.add_argument("--out", required=True)
    r.add_argument("--keypoints", help="trajectory file whose kp2d fields are the 2D targets")
    r.add_argument("--history", help="loss history CSV")
    r.add_argument("--iters", type=int, default=1000)
    r.add_argument("--lr", type=float, default=1e-3)
    r.add_argument("--weights", type=_weights, default=(1.0, 100.0, 10.0))
    r.add_argument("--weight-decay", type=float, default=0.0)
    r.add_argument("--refine-pose", action="store_true")
    r.add_argument("--accel-2d", action="store_true")
    r.add_argument("--seed", type=int, default=0, help="accepted for uniformity; refinement is deterministic")
    r.add_argument("--template")
    r.set_defaults(func=cmd_refine)

    a = sub.add_parser("attn-check", help="run the adapter-attention invariants at toy scale")
    a.add_argument("--frames", type=int, default=8)
    a.add_argument("--tokens", type=int, default=4)
    a.add_argument("--dim", type=int, default=64)
    a.add_argument("--heads", type=int, default=4)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--save", help="write the toy weights to this container")
    a.set_defaults(func=cmd_attn_check)

    sr = sub.add_parser("sensitivity-report", help="weak-to-full depth error over focal lengths and scale errors")
    sr.add_argument("--s", type=float, default=1000.0, help="weak scale in px/m")
    sr.add_argument("--f", type=_float_list, default=[500.0, 1000.0, 2000.0, 5000.0])
    sr.add_argument("--eps", type=_float_list, default=[-0.06, -0.03, 0.0, 0.03, 0.06])
    sr.add_argument("--csv", help="plot-ready CSV output")
    sr.set_defaults(func=cmd_sensitivity_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"handtraj: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"handtraj: error: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_USAGE
    except HandTrajError as exc:
        print(f"handtraj: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
