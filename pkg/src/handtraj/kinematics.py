"""Simplified articulated hand: 21 joints, 16 rotated frames, linear shape space.

Joint order is wrist first, then thumb, index, middle, ring, pinky, each
listed proximal to tip::

    0 wrist
    1-4   thumb  (cmc, mcp, ip, tip)
    5-8   index  (mcp, pip, dip, tip)
    9-12  middle (mcp, pip, dip, tip)
    13-16 ring   (mcp, pip, dip, tip)
    17-20 pinky  (mcp, pip, dip, tip)

The 48 pose values are the wrist rotation followed by 15 finger rotations
(three per finger, proximal to distal), all axis-angle in radians.
Fingertips carry no rotation.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument, UnitError, VersionError

NUM_JOINTS = 21
NUM_BONES = 20
NUM_BETAS = 10
NUM_ROTATIONS = 16
FINGERS = ("thumb", "index", "middle", "ring", "pinky")

JOINT_NAMES = ("wrist",) + tuple(
    f"{finger}_{seg}"
    for finger, segs in zip(
        FINGERS,
        [("cmc", "mcp", "ip", "tip")] + [("mcp", "pip", "dip", "tip")] * 4,
    )
    for seg in segs
)
PARENTS = np.array([-1] + [p for f in range(5) for p in (0, 4 * f + 1, 4 * f + 2, 4 * f + 3)])
# joint index that each of the 16 pose rotations belongs to
ROTATED_JOINTS = np.array([0] + [4 * f + 1 + k for f in range(5) for k in range(3)])
JOINT_ORDER_TAG = "wrist-thumb-index-middle-ring-pinky/proximal-to-tip"

# bone radius in meters, indexed by child joint - 1 (palm segment, proximal, middle, distal)
BONE_RADII = np.array(
    [0.014, 0.011, 0.010, 0.009]  # thumb
    + [0.012, 0.010, 0.009, 0.008] * 3  # index, middle, ring
    + [0.011, 0.009, 0.008, 0.007]  # pinky
)

TEMPLATE_FORMAT = "handtraj-template"
TEMPLATE_VERSION = 1
SHAPE_BASIS_SEED = 20240601
SHAPE_BASIS_SCALE = 0.02

_CANONICAL_REST = np.array([
    [0.000, 0.000, 0.000],
    [0.025, 0.020, 0.010], [0.045, 0.045, 0.015], [0.060, 0.070, 0.020], [0.072, 0.090, 0.022],
    [0.025, 0.095, 0.000], [0.028, 0.135, 0.000], [0.030, 0.160, 0.000], [0.031, 0.178, 0.000],
    [0.005, 0.095, 0.000], [0.005, 0.137, 0.000], [0.005, 0.163, 0.000], [0.005, 0.180, 0.000],
    [-0.015, 0.090, 0.000], [-0.015, 0.128, 0.000], [-0.015, 0.152, 0.000], [-0.015, 0.169, 0.000],
    [-0.033, 0.080, 0.000], [-0.033, 0.111, 0.000], [-0.033, 0.130, 0.000], [-0.033, 0.145, 0.000],
])


@dataclass(frozen=True)
class HandPose:
    """Wrist rotation plus 15 finger rotations (axis-angle, radians)."""

    wrist_rot: np.ndarray
    finger_rots: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.wrist_rot, dtype=float)
        f = np.asarray(self.finger_rots, dtype=float)
        if w.shape[-1:] != (3,) or f.shape[-2:] != (15, 3):
            raise InvalidArgument(f"bad pose shapes {w.shape}, {f.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(f))):
            raise InvalidArgument("pose contains non-finite values")
        object.__setattr__(self, "wrist_rot", w)
        object.__setattr__(self, "finger_rots", f)

    @classmethod
    def zeros(cls) -> "HandPose":
        return cls(np.zeros(3), np.zeros((15, 3)))

    @classmethod
    def from_vector(cls, theta) -> "HandPose":
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != 48:
            raise InvalidArgument(f"pose vector must have 48 values, got {theta.shape[-1]}")
        rots = theta.reshape(theta.shape[:-1] + (16, 3))
        return cls(rots[..., 0, :], rots[..., 1:, :])

    def rotations(self) -> np.ndarray:
        """(..., 16, 3) axis-angle array, wrist first."""
        return np.concatenate([self.wrist_rot[..., None, :], self.finger_rots], axis=-2)

    def as_vector(self) -> np.ndarray:
        r = self.rotations()
        return r.reshape(r.shape[:-2] + (48,))


@dataclass(frozen=True)
class HandShape:
    betas: np.ndarray = field(default_factory=lambda: np.zeros(NUM_BETAS))

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float)
        if b.shape[-1:] != (NUM_BETAS,):
            raise InvalidArgument(f"betas must have {NUM_BETAS} values, got shape {b.shape}")
        if not np.all(np.isfinite(b)):
            raise InvalidArgument("betas contain non-finite values")
        object.__setattr__(self, "betas", b)


@dataclass(frozen=True)
class HandTemplate:
    rest_joints: np.ndarray  # (21, 3) meters
    parents: np.ndarray  # (21,), -1 for the wrist
    shape_basis: np.ndarray  # (21, 3, 10) meters per unit beta
    names: tuple = JOINT_NAMES

    def __post_init__(self):
        rest = np.asarray(self.rest_joints, dtype=float)
        parents = np.asarray(self.parents, dtype=int)
        basis = np.asarray(self.shape_basis, dtype=float)
        if rest.shape != (NUM_JOINTS, 3) or basis.shape != (NUM_JOINTS, 3, NUM_BETAS):
            raise InvalidArgument("template arrays have wrong shape")
        if not np.array_equal(parents, PARENTS):
            raise InvalidArgument("template parents must follow the fixed 21-joint ordering")
        bones = rest[1:] - rest[parents[1:]]
        if np.any(np.linalg.norm(bones, axis=1) <= 0):
            raise InvalidArgument("template has a zero-length bone")
        object.__setattr__(self, "rest_joints", rest)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "shape_basis", basis)


def build_canonical_template() -> HandTemplate:
    """Regenerate the shipped template from its seed.

    The shape basis is a seeded Gaussian matrix with orthonormalized columns;
    the wrist row is zero so the wrist stays at the local origin for every shape.
    """
    rng = np.random.Generator(np.random.Philox(key=SHAPE_BASIS_SEED))
    raw = rng.standard_normal(((NUM_JOINTS - 1) * 3, NUM_BETAS))
    q, r = np.linalg.qr(raw)
    q = q * np.sign(np.diag(r))
    basis = np.zeros((NUM_JOINTS, 3, NUM_BETAS))
    basis[1:] = (SHAPE_BASIS_SCALE * q).reshape(NUM_JOINTS - 1, 3, NUM_BETAS)
    return HandTemplate(_CANONICAL_REST.copy(), PARENTS.copy(), basis)


def format_template(template: HandTemplate) -> str:
    lines = [
        f"# 21-joint hand template, joint order {JOINT_ORDER_TAG}",
        f"{TEMPLATE_FORMAT} {TEMPLATE_VERSION}",
        "units meters",
        f"joints {NUM_JOINTS}",
        f"betas {NUM_BETAS}",
    ]
    for j in range(NUM_JOINTS):
        xyz = " ".join(repr(float(v)) for v in template.rest_joints[j])
        lines.append(f"joint {j} {template.names[j]} {template.parents[j]} {xyz}")
    for j in range(NUM_JOINTS):
        for c in range(3):
            vals = " ".join(repr(float(v)) for v in template.shape_basis[j, c])
            lines.append(f"basis {j} {'xyz'[c]} {vals}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_template(template: HandTemplate, path) -> None:
    Path(path).write_text(format_template(template))


def parse_template(text: str) -> HandTemplate:
    rows = [
        (i + 1, ln.split())
        for i, ln in enumerate(text.splitlines())
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not rows or rows[0][1][:1] != [TEMPLATE_FORMAT]:
        raise FormatError("not a hand template file", line=rows[0][0] if rows else 1)
    lineno, head = rows[0]
    if len(head) != 2 or head[1] != str(TEMPLATE_VERSION):
        raise VersionError(f"unsupported template version {head[1:]}", line=lineno)
    header = {r[1][0]: (r[0], r[1]) for r in rows[1:5]}
    if "units" not in header or header["units"][1][1:] != ["meters"]:
        raise UnitError("template must declare 'units meters'", line=rows[1][0] if len(rows) > 1 else None)
    rest = np.full((NUM_JOINTS, 3), np.nan)
    parents = np.full(NUM_JOINTS, -2)
    basis = np.full((NUM_JOINTS, 3, NUM_BETAS), np.nan)
    names = [""] * NUM_JOINTS
    seen_end = False
    for lineno, tok in rows[1:]:
        try:
            if tok[0] == "joint":
                j = int(tok[1])
                names[j] = tok[2]
                parents[j] = int(tok[3])
                rest[j] = [float(v) for v in tok[4:7]]
                if len(tok) != 7:
                    raise ValueError
            elif tok[0] == "basis":
                j, c = int(tok[1]), "xyz".index(tok[2])
                if len(tok) != 3 + NUM_BETAS:
                    raise ValueError
                basis[j, c] = [float(v) for v in tok[3:]]
            elif tok[0] == "end":
                seen_end = True
            elif tok[0] in ("units", "joints", "betas"):
                if tok[0] != "units" and int(tok[1]) != (NUM_JOINTS if tok[0] == "joints" else NUM_BETAS):
                    raise ValueError
            else:
                raise ValueError
        except (ValueError, IndexError):
            raise FormatError(f"malformed template line {' '.join(tok)!r}", line=lineno) from None
    if not seen_end or np.isnan(rest).any() or np.isnan(basis).any():
        raise FormatError("template is incomplete")
    return HandTemplate(rest, parents, basis, tuple(names))


def load_template(path) -> HandTemplate:
    return parse_template(Path(path).read_text())


@functools.lru_cache(maxsize=1)
def default_template() -> HandTemplate:
    text = resources.files("handtraj").joinpath("data/hand_template_v1.txt").read_text()
    return parse_template(text)


def _skew(v: np.ndarray) -> np.ndarray:
    z = np.zeros(v.shape[:-1])
    x, y, w = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([
        np.stack([z, -w, y], axis=-1),
        np.stack([w, z, -x], axis=-1),
        np.stack([-y, x, z], axis=-1),
    ], axis=-2)


def axis_angle_to_matrix(v) -> np.ndarray:
    """Rodrigues' formula, batched over leading axes.

    Below an angle of 1e-8 the second-order series ``I + K + K^2/2`` is used.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != 3:
        raise InvalidArgument(f"axis-angle vectors need 3 components, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgument("axis-angle vector is not finite")
    theta = np.linalg.norm(v, axis=-1)
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    K = _skew(v)
    K2 = K @ K
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2


def so3_left_jacobian(v) -> np.ndarray:
    """J such that d(R(v)) R(v)^T = skew(J dv); series below 1e-6 rad."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    small = theta < 1e-6
    safe = np.where(small, 1.0, theta)
    K = _skew(v)
    a = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    b = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (safe - np.sin(safe)) / safe**3)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def shaped_template(template: HandTemplate, shape) -> np.ndarray:
    """Rest joints for the given betas, shape (..., 21, 3)."""
    betas = shape.betas if isinstance(shape, HandShape) else np.asarray(shape, dtype=float)
    return template.rest_joints + np.einsum("jcb,...b->...jc", template.shape_basis, betas)


def _pose_rotations(pose) -> np.ndarray:
    if isinstance(pose, HandPose):
        return pose.rotations()
    rots = np.asarray(pose, dtype=float)
    if rots.shape[-1] == 48:
        rots = rots.reshape(rots.shape[:-1] + (16, 3))
    if rots.shape[-2:] != (16, 3):
        raise InvalidArgument(f"pose must be (..., 16, 3) or (..., 48), got {rots.shape}")
    return rots


def forward_kinematics_full(pose, shape, template: HandTemplate | None = None):
    """Joints (..., 21, 3) and accumulated joint rotations (..., 21, 3, 3).

    The accumulated rotation of a fingertip equals its parent's.
    """
    template = template or default_template()
    rots = _pose_rotations(pose)
    rest = shaped_template(template, shape)
    lead = np.broadcast_shapes(rots.shape[:-2], rest.shape[:-2])
    rest = np.broadcast_to(rest, lead + (NUM_JOINTS, 3))
    local = np.broadcast_to(np.eye(3), lead + (NUM_JOINTS, 3, 3)).copy()
    local[..., ROTATED_JOINTS, :, :] = axis_angle_to_matrix(np.broadcast_to(rots, lead + (16, 3)))
    G = np.empty(lead + (NUM_JOINTS, 3, 3))
    J = np.empty(lead + (NUM_JOINTS, 3))
    G[..., 0, :, :] = local[..., 0, :, :]
    J[..., 0, :] = rest[..., 0, :]
    for j in range(1, NUM_JOINTS):
        p = PARENTS[j]
        bone = rest[..., j, :] - rest[..., p, :]
        J[..., j, :] = J[..., p, :] + np.einsum("...ab,...b->...a", G[..., p, :, :], bone)
        G[..., j, :, :] = G[..., p, :, :] @ local[..., j, :, :]
    return J, G


def forward_kinematics(pose, shape, template: HandTemplate | None = None) -> np.ndarray:
    """Local-frame joints (..., 21, 3); wrist at the template's wrist position."""
    return forward_kinematics_full(pose, shape, template)[0]


def bone_lengths(joints: np.ndarray) -> np.ndarray:
    return np.linalg.norm(joints[..., 1:, :] - joints[..., PARENTS[1:], :], axis=-1)


def surface_samples(pose, shape, template: HandTemplate | None = None, samples_per_bone: int = 4):
    """Points along each bone plus their radius.

    Returns ``(points, radii)`` with points of shape (..., 20 * samples_per_bone, 3),
    bone-major. Sample k of a bone sits at fraction (k + 0.5) / samples_per_bone
    from the parent joint.
    """
    if samples_per_bone < 1:
        raise InvalidArgument("samples_per_bone must be >= 1")
    J = forward_kinematics(pose, shape, template)
    alpha = (np.arange(samples_per_bone) + 0.5) / samples_per_bone
    start = J[..., PARENTS[1:], :][..., :, None, :]
    end = J[..., 1:, :][..., :, None, :]
    pts = start + alpha[:, None] * (end - start)
    pts = pts.reshape(J.shape[:-2] + (NUM_BONES * samples_per_bone, 3))
    radii = np.repeat(BONE_RADII, samples_per_bone)
    return pts, radii
