"""Text trajectory files, binary depth-map sequences, loss histories.

Trajectory file layout (UTF-8, whitespace separated, ``#`` starts a comment)::

    format handtraj-trajectory
    version 1
    units meters
    joint_order wrist-thumb-index-middle-ring-pinky/proximal-to-tip
    fps 6.0
    intrinsics <f> <cx> <cy> <width> <height>      (optional)
    frames <N>
    frame <id> pose <48> shape <10> cam <s> <tx> <ty> delta_d <v> [root <3>] [kp2d <42>]
    ...
    end

Floats are written with ``repr`` (shortest round-tripping decimal), so a
write/read cycle is lossless. Depth-map sequences use a little-endian binary
container: magic ``HTDM``, uint32 version, uint32 count, width, height,
followed by ``count*height*width`` float32 values in row-major order, NaN
marking invalid pixels. A plain-text variant (``format handtraj-depth``)
stores the same grids with ``repr`` floats and ``nan``.
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .camera import Intrinsics, WeakPerspCam
from .errors import FormatError, InvalidArgument, UnitError, VersionError
from .kinematics import JOINT_ORDER_TAG, NUM_BETAS, NUM_JOINTS, HandPose, HandShape
from .lift import DepthMap, FramePrediction, Trajectory

TRAJ_FORMAT = "handtraj-trajectory"
TRAJ_VERSION = 1
POSE_DIM = 48
DEPTH_MAGIC = b"HTDM"
DEPTH_VERSION = 1


@dataclass
class TrajectoryRecord:
    frame: int
    pose: np.ndarray  # (48,)
    shape: np.ndarray  # (10,)
    cam: tuple  # (s, tx, ty)
    delta_d: float = 0.0
    root: np.ndarray | None = None  # (3,)
    keypoints2d: np.ndarray | None = None  # (21, 2)

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=float).reshape(-1)
        self.shape = np.asarray(self.shape, dtype=float).reshape(-1)
        if self.pose.shape != (POSE_DIM,) or self.shape.shape != (NUM_BETAS,):
            raise InvalidArgument(f"record needs {POSE_DIM} pose and {NUM_BETAS} shape values")
        self.cam = tuple(float(c) for c in self.cam)
        if len(self.cam) != 3:
            raise InvalidArgument("cam must be (s, tx, ty)")
        if self.root is not None:
            self.root = np.asarray(self.root, dtype=float).reshape(3)
        if self.keypoints2d is not None:
            self.keypoints2d = np.asarray(self.keypoints2d, dtype=float).reshape(NUM_JOINTS, 2)

    def __eq__(self, other):
        if not isinstance(other, TrajectoryRecord):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(a, b)

        return (self.frame == other.frame and same(self.pose, other.pose) and same(self.shape, other.shape)
                and self.cam == other.cam and self.delta_d == other.delta_d
                and same(self.root, other.root) and same(self.keypoints2d, other.keypoints2d))


@dataclass
class TrajectoryFile:
    records: list
    fps: float = 30.0
    intrinsics: Intrinsics | None = None
    joint_order: str = JOINT_ORDER_TAG
    version: int = TRAJ_VERSION
    units: str = "meters"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.frame for r in self.records]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise InvalidArgument("frame indices must be strictly increasing")

    @property
    def frame_ids(self) -> np.ndarray:
        return np.array([r.frame for r in self.records], dtype=int)

    def predictions(self) -> list[FramePrediction]:
        return [
            FramePrediction(
                pose=HandPose.from_vector(r.pose),
                shape=HandShape(r.shape),
                cam=WeakPerspCam(*r.cam),
                delta_d=r.delta_d,
                keypoints2d=r.keypoints2d,
            )
            for r in self.records
        ]

    def keypoints2d(self) -> np.ndarray | None:
        if not self.records or any(r.keypoints2d is None for r in self.records):
            return None
        return np.stack([r.keypoints2d for r in self.records])

    def roots(self) -> np.ndarray | None:
        if not self.records or any(r.root is None for r in self.records):
            return None
        return np.stack([r.root for r in self.records])

    def trajectory(self, template=None) -> Trajectory:
        """Camera-frame trajectory from the stored roots (every record needs one)."""
        from .kinematics import forward_kinematics

        roots = self.roots()
        if roots is None:
            raise FormatError("trajectory file has records without a root translation")
        poses = np.stack([r.pose.reshape(16, 3) for r in self.records])
        betas = np.stack([r.shape for r in self.records])
        local = forward_kinematics(poses, betas, template)
        return Trajectory(local + roots[:, None, :], roots, self.intrinsics, self.fps, poses, betas, self.frame_ids)


def records_from_predictions(predictions: Sequence[FramePrediction], frame_ids=None, roots=None) -> list:
    ids = range(len(predictions)) if frame_ids is None else frame_ids
    out = []
    for k, (fid, p) in enumerate(zip(ids, predictions)):
        out.append(TrajectoryRecord(
            frame=int(fid), pose=p.pose.as_vector(), shape=p.shape.betas,
            cam=(p.cam.s, p.cam.tx, p.cam.ty), delta_d=p.delta_d,
            root=None if roots is None else roots[k], keypoints2d=p.keypoints2d,
        ))
    return out


def file_from_trajectory(traj: Trajectory, predictions: Sequence[FramePrediction] | None = None,
                         keypoints2d=None) -> TrajectoryFile:
    """Trajectory file carrying ``traj``'s roots.

    Camera fields come from ``predictions`` when given, otherwise from the
    exact weak camera implied by each root (``s = f / z``).
    """
    if predictions is None:
        from .synth import gt_predictions

        predictions = gt_predictions(traj, keypoints2d)
    elif keypoints2d is not None:
        raise InvalidArgument("pass keypoints through the predictions")
    if len(predictions) != len(traj):
        raise InvalidArgument(f"{len(predictions)} predictions for {len(traj)} frames")
    recs = records_from_predictions(predictions, traj.frame_ids, traj.roots)
    if traj.poses is not None:
        for r, pose, betas in zip(recs, traj.poses, traj.betas):
            r.pose = np.asarray(pose, dtype=float).reshape(-1)
            r.shape = np.asarray(betas, dtype=float)
    return TrajectoryFile(recs, traj.fps, traj.intrinsics)


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).reshape(-1))


def format_trajectory(tf: TrajectoryFile) -> str:
    lines = [
        f"format {TRAJ_FORMAT}",
        f"version {tf.version}",
        f"units {tf.units}",
        f"joint_order {tf.joint_order}",
        f"fps {float(tf.fps)!r}",
    ]
    if tf.intrinsics is not None:
        K = tf.intrinsics
        lines.append("intrinsics " + _fmt([K.f, K.cx, K.cy, K.width, K.height]))
    lines.append(f"frames {len(tf.records)}")
    for r in tf.records:
        parts = [f"frame {r.frame}", "pose " + _fmt(r.pose), "shape " + _fmt(r.shape),
                 "cam " + _fmt(r.cam), f"delta_d {float(r.delta_d)!r}"]
        if r.root is not None:
            parts.append("root " + _fmt(r.root))
        if r.keypoints2d is not None:
            parts.append("kp2d " + _fmt(r.keypoints2d))
        lines.append(" ".join(parts))
    lines.append("end")
    return "\n".join(lines) + "\n"


_HEADER_KEYS = ("format", "version", "units", "joint_order", "fps", "intrinsics", "frames")


def _floats(tokens, n, what, line, record):
    if len(tokens) < n:
        raise FormatError(f"{what}: expected {n} values, got {len(tokens)}", line, record)
    try:
        vals = [float(t) for t in tokens[:n]]
    except ValueError:
        raise FormatError(f"{what}: non-numeric value", line, record) from None
    return vals


def _parse_record(tokens, line, record) -> TrajectoryRecord:
    sections = {"pose": POSE_DIM, "shape": NUM_BETAS, "cam": 3, "delta_d": 1, "root": 3, "kp2d": 2 * NUM_JOINTS}
    try:
        frame = int(tokens[1])
    except (IndexError, ValueError):
        raise FormatError("frame record must start with an integer index", line, record) from None
    vals, i = {}, 2
    while i < len(tokens):
        key = tokens[i]
        if key not in sections:
            raise FormatError(f"unknown record field {key!r}", line, record)
        if key in vals:
            raise FormatError(f"duplicate record field {key!r}", line, record)
        n = sections[key]
        chunk = tokens[i + 1:i + 1 + n]
        if any(t in sections for t in chunk):
            raise FormatError(f"{key}: expected {n} values", line, record)
        vals[key] = _floats(chunk, n, key, line, record)
        i += 1 + n
    for key in ("pose", "shape", "cam", "delta_d"):
        if key not in vals:
            raise FormatError(f"record is missing {key!r}", line, record)
    try:
        return TrajectoryRecord(frame, vals["pose"], vals["shape"], vals["cam"], vals["delta_d"][0],
                                vals.get("root"), vals.get("kp2d"))
    except InvalidArgument as exc:
        raise FormatError(str(exc), line, record) from None


def parse_trajectory(text: str) -> TrajectoryFile:
    header, records = {}, []
    n_frames, ended = None, False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        if ended:
            raise FormatError("content after 'end'", lineno)
        tokens = content.split()
        key = tokens[0]
        if key == "frame":
            if n_frames is None:
                raise FormatError("frame record before the 'frames' header line", lineno, len(records))
            if len(records) >= n_frames:
                raise FormatError(f"more than the declared {n_frames} records", lineno, len(records))
            rec = _parse_record(tokens, lineno, len(records))
            if records and rec.frame <= records[-1].frame:
                raise FormatError(f"frame index {rec.frame} is not increasing", lineno, len(records))
            records.append(rec)
        elif key == "end":
            ended = True
        elif key in _HEADER_KEYS:
            if records:
                raise FormatError(f"header field {key!r} after records", lineno)
            if key in header:
                raise FormatError(f"duplicate header field {key!r}", lineno)
            header[key] = (tokens[1:], lineno)
            if key == "format" and tokens[1:] != [TRAJ_FORMAT]:
                raise FormatError(f"not a {TRAJ_FORMAT} file", lineno)
            if key == "version":
                try:
                    v = int(tokens[1])
                except (IndexError, ValueError):
                    raise FormatError("version must be an integer", lineno) from None
                if v != TRAJ_VERSION:
                    raise VersionError(f"unsupported trajectory version {v} (supported: {TRAJ_VERSION})", lineno)
            if key == "units" and tokens[1:] != ["meters"]:
                raise UnitError(f"unsupported unit tag {' '.join(tokens[1:])!r}; expected 'meters'", lineno)
            if key == "frames":
                try:
                    n_frames = int(tokens[1])
                except (IndexError, ValueError):
                    raise FormatError("frames must be an integer", lineno) from None
                if n_frames < 0:
                    raise FormatError("frames must be non-negative", lineno)
        else:
            raise FormatError(f"unknown line type {key!r}", lineno)
    for key in ("format", "version"):
        if key not in header:
            raise FormatError(f"missing {key!r} header line")
    if "units" not in header:
        raise UnitError("missing unit tag (expected 'units meters')")
    if n_frames is None:
        raise FormatError("missing 'frames' header line")
    if len(records) < n_frames:
        raise FormatError(f"truncated file: {len(records)} of {n_frames} records present", record=len(records))
    if not ended:
        raise FormatError("truncated file: missing 'end' line", record=len(records))
    joint_order = " ".join(header.get("joint_order", ([JOINT_ORDER_TAG], 0))[0])
    if joint_order != JOINT_ORDER_TAG:
        raise FormatError(f"unsupported joint order {joint_order!r}", header["joint_order"][1])
    fps = 30.0
    if "fps" in header:
        toks, ln = header["fps"]
        fps = _floats(toks, 1, "fps", ln, None)[0]
        if not fps > 0:
            raise FormatError("fps must be positive", ln)
    K = None
    if "intrinsics" in header:
        toks, ln = header["intrinsics"]
        try:
            K = Intrinsics(*_floats(toks, 5, "intrinsics", ln, None))
        except InvalidArgument as exc:
            raise FormatError(str(exc), ln) from None
    try:
        return TrajectoryFile(records, fps, K)
    except InvalidArgument as exc:
        raise FormatError(str(exc)) from None


def _atomic_write(path, data, mode="w"):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trajectory(tf: TrajectoryFile, path) -> None:
    _atomic_write(path, format_trajectory(tf))


def read_trajectory(path) -> TrajectoryFile:
    with open(path, encoding="utf-8") as fh:
        return parse_trajectory(fh.read())


def encode_depth_maps(maps: Sequence[DepthMap]) -> bytes:
    if not maps:
        raise InvalidArgument("no depth maps to write")
    h, w = maps[0].values.shape
    if any(m.values.shape != (h, w) for m in maps):
        raise InvalidArgument("depth maps in one container must share a size")
    head = DEPTH_MAGIC + struct.pack("<IIII", DEPTH_VERSION, len(maps), w, h)
    body = np.stack([m.values for m in maps]).astype("<f4").tobytes()
    return head + body


def decode_depth_maps(data: bytes) -> list[DepthMap]:
    if len(data) < 20 or data[:4] != DEPTH_MAGIC:
        raise FormatError("not a depth-map container (bad magic)")
    version, count, w, h = struct.unpack("<IIII", data[4:20])
    if version != DEPTH_VERSION:
        raise VersionError(f"unsupported depth-map container version {version}")
    expected = 20 + 4 * count * w * h
    if len(data) != expected:
        raise FormatError(f"depth-map container has {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype="<f4", offset=20).reshape(count, h, w).astype(float)
    try:
        return [DepthMap(a) for a in arr]
    except InvalidArgument as exc:
        raise FormatError(str(exc)) from None


DEPTH_TEXT_FORMAT = "handtraj-depth"


def format_depth_maps_text(maps: Sequence[DepthMap]) -> str:
    if not maps:
        raise InvalidArgument("no depth maps to write")
    h, w = maps[0].values.shape
    lines = [f"format {DEPTH_TEXT_FORMAT}", f"version {DEPTH_VERSION}", "units meters", f"size {w} {h}",
             f"maps {len(maps)}"]
    for k, m in enumerate(maps):
        if m.values.shape != (h, w):
            raise InvalidArgument("depth maps in one file must share a size")
        lines.append(f"map {k}")
        lines += [" ".join(repr(float(v)) for v in row) for row in m.values]
    lines.append("end")
    return "\n".join(lines) + "\n"


def parse_depth_maps_text(text: str) -> list[DepthMap]:
    rows = [(n, ln.split("#", 1)[0].split()) for n, ln in enumerate(text.splitlines(), start=1)]
    rows = [(n, t) for n, t in rows if t]
    head = {}
    i = 0
    while i < len(rows) and rows[i][1][0] in ("format", "version", "units", "size", "maps"):
        n, t = rows[i]
        head[t[0]] = (t[1:], n)
        i += 1
    if head.get("format", ([None],))[0] != [DEPTH_TEXT_FORMAT]:
        raise FormatError(f"not a {DEPTH_TEXT_FORMAT} file", 1)
    try:
        version = int(head["version"][0][0])
        w, h = (int(v) for v in head["size"][0])
        count = int(head["maps"][0][0])
    except (KeyError, IndexError, ValueError):
        raise FormatError("depth header needs version, size <w> <h> and maps <n>") from None
    if version != DEPTH_VERSION:
        raise VersionError(f"unsupported depth-map version {version}", head["version"][1])
    if head.get("units", ([None],))[0] != ["meters"]:
        raise UnitError("depth maps must declare 'units meters'")
    maps = []
    for k in range(count):
        if i >= len(rows) or rows[i][1] != ["map", str(k)]:
            raise FormatError(f"expected 'map {k}'", rows[i][0] if i < len(rows) else None, k)
        i += 1
        if i + h > len(rows):
            raise FormatError("truncated depth map", None, k)
        grid = []
        for n, t in rows[i:i + h]:
            if len(t) != w:
                raise FormatError(f"depth row has {len(t)} values, expected {w}", n, k)
            try:
                grid.append([float(v) for v in t])
            except ValueError:
                raise FormatError("non-numeric depth value", n, k) from None
        i += h
        try:
            maps.append(DepthMap(np.array(grid)))
        except InvalidArgument as exc:
            raise FormatError(str(exc), None, k) from None
    if i >= len(rows) or rows[i][1] != ["end"]:
        raise FormatError("truncated file: missing 'end' line", None, count)
    return maps


def write_depth_maps(maps: Sequence[DepthMap], path) -> None:
    """Binary container, or the text variant when ``path`` ends in ``.txt``."""
    if str(path).endswith(".txt"):
        _atomic_write(path, format_depth_maps_text(maps))
    else:
        _atomic_write(path, encode_depth_maps(maps), "wb")


def read_depth_maps(path) -> list[DepthMap]:
    if str(path).endswith(".txt"):
        with open(path, encoding="utf-8") as fh:
            return parse_depth_maps_text(fh.read())
    with open(path, "rb") as fh:
        return decode_depth_maps(fh.read())


def write_loss_history(history, path) -> None:
    """CSV with one row per optimizer evaluation: iteration, total and each term."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "total", "reproj", "accel", "anchor"])
        for it, h in enumerate(history):
            wr.writerow([it, repr(h.total), repr(h.reproj), repr(h.accel), repr(h.anchor)])


def read_loss_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "iteration" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
