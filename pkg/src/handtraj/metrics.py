"""Similarity alignment and trajectory error metrics.

All 3D metrics take joints in meters and report millimeters. The joint
ordering is the one fixed in :mod:`handtraj.kinematics`.

* GA-MPJPE: one similarity fit over every joint of every frame.
* FA-MPJPE: similarity fit on the first frame, applied to all frames.
* PA-MPJPE: a separate similarity fit per frame.
* ACC-NORM: mean norm of the difference of unit-lag second differences
  (mm / frame^2, no fps scaling).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    DegenerateConfiguration,
    InsufficientPoints,
    InvalidArgument,
    SequenceTooShort,
    ShortSequenceWarning,
)

M_TO_MM = 1000.0
DEFAULT_CLIP_LEN = 60
DEFAULT_PCK_THRESHOLDS = (0.05, 0.1, 0.15)


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))


def umeyama_similarity(src, dst) -> SimilarityTransform:
    """Closed-form least-squares similarity mapping ``src`` onto ``dst``.

    Minimizes ``sum ||s R src_i + t - dst_i||^2`` over scale, proper rotation
    and translation (Umeyama 1991). Reflections are excluded by flipping the
    weakest singular direction when the cross-covariance has negative
    determinant.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise InvalidArgument(f"point sets differ in shape: {src.shape} vs {dst.shape}")
    n = len(src)
    if n < 3:
        raise InsufficientPoints(f"need at least 3 points, got {n}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    sv_src = np.linalg.svd(xs, compute_uv=False)
    if sv_src[0] == 0 or sv_src[1] <= 1e-10 * sv_src[0]:
        raise DegenerateConfiguration("source points are coincident or collinear")
    var_s = np.sum(xs**2) / n
    U, d, Vt = np.linalg.svd(xd.T @ xs / n)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    scale = float(np.dot(d, S) / var_s)
    t = mu_d - scale * R @ mu_s
    return SimilarityTransform(scale, R, t)


def _joints(x) -> np.ndarray:
    j = getattr(x, "joints", x)
    j = np.asarray(j, dtype=float)
    if j.ndim == 2:
        j = j[None]
    if j.ndim != 3 or j.shape[-1] != 3:
        raise InvalidArgument(f"expected (T, J, 3) joints, got {j.shape}")
    return j


def _pair(pred, gt):
    p, g = _joints(pred), _joints(gt)
    if p.shape != g.shape:
        raise InvalidArgument(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    return p, g


def _mpjpe(p, g) -> float:
    return float(np.mean(np.linalg.norm(p - g, axis=-1)) * M_TO_MM)


def ga_mpjpe(pred, gt) -> float:
    p, g = _pair(pred, gt)
    tf = umeyama_similarity(p.reshape(-1, 3), g.reshape(-1, 3))
    return _mpjpe(tf.apply(p), g)


def fa_mpjpe(pred, gt) -> float:
    p, g = _pair(pred, gt)
    tf = umeyama_similarity(p[0], g[0])
    return _mpjpe(tf.apply(p), g)


def pa_mpjpe(pred, gt) -> float:
    p, g = _pair(pred, gt)
    errs = [_mpjpe(umeyama_similarity(pf, gf).apply(pf), gf) for pf, gf in zip(p, g)]
    return float(np.mean(errs))


def second_difference(x: np.ndarray) -> np.ndarray:
    return x[2:] - 2.0 * x[1:-1] + x[:-2]


def acc_norm(pred, gt) -> float:
    p, g = _pair(pred, gt)
    if len(p) < 3:
        raise SequenceTooShort(f"acceleration needs >= 3 frames, got {len(p)}")
    diff = second_difference(p) - second_difference(g)
    return float(np.mean(np.linalg.norm(diff, axis=-1)) * M_TO_MM)


def pck(pred2d, gt2d, thresholds=DEFAULT_PCK_THRESHOLDS, norm=1.0) -> dict[float, float]:
    """Fraction of keypoints within ``threshold * norm`` pixels, pooled over frames.

    ``norm`` is per frame (scalar broadcasts), e.g. the longest side of the
    ground-truth hand box.
    """
    p = np.asarray(pred2d, dtype=float)
    g = np.asarray(gt2d, dtype=float)
    if p.shape != g.shape or p.shape[-1] != 2:
        raise InvalidArgument(f"keypoint arrays must match and end in 2, got {p.shape}, {g.shape}")
    if p.ndim == 2:
        p, g = p[None], g[None]
    norm = np.broadcast_to(np.asarray(norm, dtype=float), p.shape[:1])
    if np.any(~(norm > 0)):
        raise InvalidArgument("PCK normalization must be positive for every frame")
    dist = np.linalg.norm(p - g, axis=-1) / norm[:, None]
    return {float(t): float(np.mean(dist <= t)) for t in thresholds}


def bbox_size(keypoints2d) -> np.ndarray:
    """Longest side of the per-frame keypoint bounding box (pixels)."""
    k = np.asarray(keypoints2d, dtype=float)
    return np.max(k.max(axis=-2) - k.min(axis=-2), axis=-1)


def clip_sequences(pred, gt, clip_len: int = DEFAULT_CLIP_LEN):
    """Split into consecutive non-overlapping clips of exactly ``clip_len``.

    The remainder is dropped. A sequence shorter than ``clip_len`` comes back
    as one whole clip and the returned flag is True.
    """
    if clip_len < 3:
        raise InvalidArgument(f"clip length must be >= 3, got {clip_len}")
    p, g = _pair(pred, gt)
    T = len(p)
    if T < clip_len:
        warnings.warn(
            f"sequence of {T} frames is shorter than clip length {clip_len}; evaluating it whole",
            ShortSequenceWarning,
            stacklevel=2,
        )
        return [(p, g)], True
    n = T // clip_len
    return [(p[i * clip_len:(i + 1) * clip_len], g[i * clip_len:(i + 1) * clip_len]) for i in range(n)], False


@dataclass
class MetricReport:
    ga_mpjpe: float
    fa_mpjpe: float
    pa_mpjpe: float
    acc_norm: float
    pck: dict = field(default_factory=dict)
    n_frames: int = 0
    n_clips: int = 0
    ga_mpjpe_whole: float | None = None
    short_sequence: bool = False
    config: dict = field(default_factory=dict)

    COLUMNS = {
        "ga_mpjpe": "GA-MPJPE",
        "fa_mpjpe": "FA-MPJPE",
        "acc_norm": "ACC-NORM",
        "pa_mpjpe": "PA-MPJPE",
    }

    def to_text(self) -> str:
        lines = [f"{name}={getattr(self, key)!r}" for key, name in self.COLUMNS.items()]
        lines += [f"PCK@{t:g}={v!r}" for t, v in sorted(self.pck.items())]
        if self.ga_mpjpe_whole is not None:
            lines.append(f"GA-MPJPE-whole={self.ga_mpjpe_whole!r}")
        lines += [f"n_frames={self.n_frames}", f"n_clips={self.n_clips}",
                  f"short_sequence={self.short_sequence}"]
        lines += [f"config.{k}={v}" for k, v in sorted(self.config.items())]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pck"] = {f"{t:g}": v for t, v in sorted(self.pck.items())}
        d["columns"] = {name: getattr(self, key) for key, name in self.COLUMNS.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(pred, gt, *, clip_len: int = DEFAULT_CLIP_LEN, pred2d=None, gt2d=None,
             pck_norm=None, thresholds=DEFAULT_PCK_THRESHOLDS, config=None) -> MetricReport:
    """All metrics for one sequence; global metrics are averaged over clips.

    PCK is computed only when 2D keypoints are supplied; ``pck_norm``
    defaults to the ground-truth keypoint box size.
    """
    p, g = _pair(pred, gt)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShortSequenceWarning)
        clips, short = clip_sequences(p, g, clip_len)
    if short:
        warnings.warn(f"sequence of {len(p)} frames evaluated as one clip", ShortSequenceWarning, stacklevel=2)
    ga = [ga_mpjpe(a, b) for a, b in clips]
    fa = [fa_mpjpe(a, b) for a, b in clips]
    pa = [pa_mpjpe(a, b) for a, b in clips]
    acc = [acc_norm(a, b) for a, b in clips]
    pck_vals = {}
    if pred2d is not None and gt2d is not None:
        norm = bbox_size(gt2d) if pck_norm is None else pck_norm
        pck_vals = pck(pred2d, gt2d, thresholds, norm)
    return MetricReport(
        ga_mpjpe=float(np.mean(ga)),
        fa_mpjpe=float(np.mean(fa)),
        pa_mpjpe=float(np.mean(pa)),
        acc_norm=float(np.mean(acc)),
        pck=pck_vals,
        n_frames=sum(len(a) for a, _ in clips),
        n_clips=len(clips),
        ga_mpjpe_whole=ga_mpjpe(p, g),
        short_sequence=short,
        config=dict(config or {}, clip_len=clip_len),
    )


def combine_reports(reports, config=None) -> MetricReport:
    """Clip-weighted mean of several sequence reports, in input order."""
    if not reports:
        raise InvalidArgument("no reports to combine")
    w = np.array([r.n_clips for r in reports], dtype=float)

    def avg(key):
        return float(np.dot(w, [getattr(r, key) for r in reports]) / w.sum())

    thresholds = sorted(set().union(*[r.pck for r in reports]))
    pck_vals = {}
    for t in thresholds:
        frames = [(r.pck[t], r.n_frames) for r in reports if t in r.pck]
        pck_vals[t] = float(sum(v * n for v, n in frames) / sum(n for _, n in frames))
    return MetricReport(
        avg("ga_mpjpe"), avg("fa_mpjpe"), avg("pa_mpjpe"), avg("acc_norm"), pck_vals,
        n_frames=sum(r.n_frames for r in reports), n_clips=int(w.sum()),
        short_sequence=any(r.short_sequence for r in reports), config=dict(config or {}),
    )
