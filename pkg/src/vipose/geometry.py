"""Rigid transforms and the pseudo-exponential twist parameterization.

Poses are camera_from_object transforms stored as (3x3 rotation, 3-vector
translation). A twist is the 6-vector ``[t, w]`` whose rotation part maps
through Rodrigues' formula while the translation part is copied verbatim.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-7
# Euler order used when sampling random relative rotations: R = Rz(yaw) Ry(pitch) Rx(roll).
EULER_ORDER = "ZYX"


def _frozen(a, shape) -> np.ndarray:
    a = np.array(a, dtype=np.float64).reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def to_row(self) -> list[float]:
        """12 numbers: rotation row-major then translation."""
        return [float(v) for v in self.rotation.ravel()] + [float(v) for v in self.translation]

    @classmethod
    def from_row(cls, row) -> "Pose":
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (12,):
            raise ValueError(f"pose row needs 12 numbers, got {row.shape}")
        return cls(row[:9].reshape(3, 3), row[9:])

    def is_valid(self, tol: float = 1e-6) -> bool:
        r = self.rotation
        return bool(np.all(np.abs(r.T @ r - np.eye(3)) < tol) and abs(np.linalg.det(r) - 1.0) < tol)

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class Twist:
    t: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen(self.t, (3,)))
        object.__setattr__(self, "w", _frozen(self.w, (3,)))

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, v) -> "Twist":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:3], v[3:6])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.t, self.w])

    def __repr__(self):
        return f"Twist(t={self.t.tolist()}, w={self.w.tolist()})"


def skew(w) -> np.ndarray:
    x, y, z = np.asarray(w, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def rodrigues(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    k = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    return np.eye(3) + (np.sin(theta) / theta) * k + ((1.0 - np.cos(theta)) / theta**2) * (k @ k)


def rotation_log(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector with norm in [0, pi]."""
    r = np.asarray(r, dtype=np.float64)
    v = _vee(r)  # 2 sin(theta) * axis
    s = 0.5 * np.linalg.norm(v)
    c = 0.5 * (np.trace(r) - 1.0)
    theta = float(np.arctan2(s, c))
    if theta < SMALL_ANGLE:
        return 0.5 * v
    if c > -0.9:
        return (theta / (2.0 * np.sin(theta))) * v
    # Near pi the antisymmetric part vanishes; read the axis off the symmetric part.
    sym = 0.5 * (r + r.T)
    aat = (sym - c * np.eye(3)) / (1.0 - c)
    i = int(np.argmax(np.diag(aat)))
    axis = aat[:, i] / np.sqrt(aat[i, i])
    axis /= np.linalg.norm(axis)
    d = float(axis @ v)
    if abs(d) > 1e-12:
        if d < 0:
            axis = -axis
    else:
        nz = axis[np.abs(axis) > 1e-12]
        if nz.size and nz[0] < 0:
            axis = -axis
    return theta * axis


def pseudo_exp(v: Twist) -> Pose:
    return Pose(rodrigues(v.w), v.t)


def pseudo_log(p: Pose) -> Twist:
    return Twist(p.translation, rotation_log(p.rotation))


def compose(a: Pose, b: Pose) -> Pose:
    """Homogeneous product a * b."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -(rt @ p.translation))


def relative_pose(prev: Pose, curr: Pose) -> Pose:
    """The delta with ``compose(delta, prev) == curr``."""
    return compose(curr, inverse(prev))


def rotation_angle(p: Pose) -> float:
    c = 0.5 * (np.trace(p.rotation) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def euler_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def sample_relative_pose(rng: np.random.Generator, sigma_rot_deg: float = 10.0,
                         sigma_trans: float = 0.02) -> Pose:
    """Random perturbation: Gaussian yaw/pitch/roll and Gaussian translation."""
    yaw, pitch, roll = np.deg2rad(rng.normal(0.0, 1.0, 3) * sigma_rot_deg)
    t = rng.normal(0.0, 1.0, 3) * sigma_trans
    return Pose(euler_zyx(yaw, pitch, roll), t)


def quat_to_matrix(q) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(r) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z) with w >= 0."""
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)
