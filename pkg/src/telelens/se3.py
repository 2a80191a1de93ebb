"""Quaternions, rigid transforms, and the pose blending filter primitives.

Conventions used throughout the package:

* Quaternions are stored (w, x, y, z) and kept unit-norm.
* A ``Pose`` maps points from its "source" frame into its "target" frame:
  ``p_target = rotation * p_source + translation``.  Translations are meters.
* Roll/pitch/yaw are Z-Y-X Tait-Bryan angles: the matrix factors as
  ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

UNIT_TOL = 1e-9

# Below this quaternion-dot angle the slerp weights degenerate and the
# normalized linear blend is used instead.
SLERP_LINEAR_FALLBACK = 1e-7


def _as_vec3(v) -> np.ndarray:
    out = np.asarray(v, dtype=float)
    if out.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {out.shape}")
    return out


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion; normalized on construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n < 1e-12:
            raise ValueError("cannot normalize a zero quaternion")
        if abs(n - 1.0) > UNIT_TOL:
            object.__setattr__(self, "w", self.w / n)
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Quaternion":
        axis = _as_vec3(axis)
        n = float(np.linalg.norm(axis))
        if n < 1e-12:
            raise ValueError("rotation axis must be nonzero")
        half = 0.5 * angle
        s = math.sin(half) / n
        return Quaternion(math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s)

    @staticmethod
    def from_rotvec(v) -> "Quaternion":
        v = _as_vec3(v)
        angle = float(np.linalg.norm(v))
        if angle < 1e-12:
            # second-order small-angle expansion keeps this smooth at zero
            return Quaternion(1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2])
        return Quaternion.from_axis_angle(v / angle, angle)

    @staticmethod
    def from_matrix(m) -> "Quaternion":
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("expected 3x3 rotation matrix")
        t = m[0, 0] + m[1, 1] + m[2, 2]
        if t > 0:
            s = math.sqrt(t + 1.0) * 2
            return Quaternion(0.25 * s, (m[2, 1] - m[1, 2]) / s,
                              (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        if m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            return Quaternion((m[2, 1] - m[1, 2]) / s, 0.25 * s,
                              (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        if m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            return Quaternion((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                              0.25 * s, (m[1, 2] + m[2, 1]) / s)
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        return Quaternion((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                          (m[1, 2] + m[2, 1]) / s, 0.25 * s)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    inverse = conjugate  # unit quaternion

    def dot(self, other: "Quaternion") -> float:
        return (self.w * other.w + self.x * other.x
                + self.y * other.y + self.z * other.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def rotate(self, v):
        """Rotate 3-vector(s); accepts shape (3,) or (N, 3)."""
        v = np.asarray(v, dtype=float)
        w, x, y, z = self.w, self.x, self.y, self.z
        # R v = v + 2 q_vec x (q_vec x v + w v)
        q = np.array([x, y, z])
        if v.ndim == 1:
            t = 2.0 * np.cross(q, v)
            return v + w * t + np.cross(q, t)
        t = 2.0 * np.cross(q[None, :], v)
        return v + w * t + np.cross(q[None, :], t)

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def to_rotvec(self) -> np.ndarray:
        vec = np.array([self.x, self.y, self.z])
        s = float(np.linalg.norm(vec))
        w = self.w
        if w < 0:  # pick the representative with angle in [0, pi]
            vec, s, w = -vec, s, -w
        angle = 2.0 * math.atan2(s, w)
        if s < 1e-12:
            return 2.0 * vec
        return vec * (angle / s)

    def rotation_equals(self, other: "Quaternion", tol: float = 1e-9) -> bool:
        """True if both represent the same rotation (double cover aware)."""
        return rotation_geodesic(self, other) <= tol


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation then translation."""

    rotation: Quaternion = field(default_factory=Quaternion.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = _as_vec3(self.translation).copy()
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_matrix(m) -> "Pose":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("expected 4x4 homogeneous matrix")
        return Pose(Quaternion.from_matrix(m[:3, :3]), m[:3, 3])

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.to_matrix()
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        """Transform point(s) from the source frame; (3,) or (N, 3)."""
        return self.rotation.rotate(points) + self.translation

    def inverse(self) -> "Pose":
        rinv = self.rotation.conjugate()
        return Pose(rinv, -rinv.rotate(self.translation))

    def __mul__(self, other: "Pose") -> "Pose":
        return compose(self, other)


@dataclass(frozen=True)
class SmootherParams:
    """First-order IIR pose filter coefficient; a=1 is passthrough."""

    a: float

    def __post_init__(self):
        if not 0.0 < self.a <= 1.0:
            raise ValueError(f"filter coefficient must be in (0, 1], got {self.a}")


def compose(a: Pose, b: Pose) -> Pose:
    """Transform applying ``b`` first, then ``a``."""
    return Pose(a.rotation * b.rotation, a.rotation.rotate(b.translation) + a.translation)


def _require_unit(q: Quaternion, name: str) -> None:
    n = math.sqrt(q.w**2 + q.x**2 + q.y**2 + q.z**2)
    if abs(n - 1.0) > 1e-6:
        raise ValueError(f"{name} must be a unit quaternion (norm {n:.3g})")


def slerp_blend(q_prev: Quaternion, q_new: Quaternion, a: float) -> Quaternion:
    """Blend from ``q_prev`` toward ``q_new`` by fraction ``a`` along the arc.

    sin((1-a)*omega)/sin(omega) * q_prev + sin(a*omega)/sin(omega) * q_new,
    with omega the quaternion-dot angle.  The shorter arc is always taken
    (q_new is negated when the dot is negative) and near-coincident inputs
    fall back to a normalized linear blend.
    """
    _require_unit(q_prev, "q_prev")
    _require_unit(q_new, "q_new")
    qp = q_prev.as_array()
    qn = q_new.as_array()
    dot = float(qp @ qn)
    if dot < 0.0:
        qn = -qn
        dot = -dot
    omega = math.acos(min(1.0, dot))
    if omega < SLERP_LINEAR_FALLBACK:
        out = (1.0 - a) * qp + a * qn
    else:
        s = math.sin(omega)
        out = (math.sin((1.0 - a) * omega) / s) * qp + (math.sin(a * omega) / s) * qn
    return Quaternion(*out)


def translation_blend(p_prev, p_new, a: float) -> np.ndarray:
    """First-order IIR step: (1-a)*p_prev + a*p_new."""
    return (1.0 - a) * _as_vec3(p_prev) + a * _as_vec3(p_new)


def rotation_geodesic(q1: Quaternion, q2: Quaternion) -> float:
    """Rotation angle between two orientations, in [0, pi]."""
    d = q1.conjugate() * q2
    s = math.sqrt(d.x**2 + d.y**2 + d.z**2)
    return 2.0 * math.atan2(s, abs(d.w))


class Rpy(NamedTuple):
    roll: float
    pitch: float
    yaw: float
    gimbal: bool = False


GIMBAL_TOL = 1e-6


def to_rpy(q: Quaternion) -> Rpy:
    """Decompose into Z-Y-X Tait-Bryan angles.

    Near pitch = +/- pi/2 the roll/yaw split is degenerate; the result is
    flagged and roll is set to 0 by convention.
    """
    m = q.to_matrix()
    sp = -m[2, 0]
    sp = max(-1.0, min(1.0, sp))
    pitch = math.asin(sp)
    if math.pi / 2 - abs(pitch) < GIMBAL_TOL:
        # roll and yaw share an axis; put everything into yaw
        yaw = math.atan2(-m[0, 1], m[1, 1])
        return Rpy(0.0, pitch, yaw, gimbal=True)
    roll = math.atan2(m[2, 1], m[2, 2])
    yaw = math.atan2(m[1, 0], m[0, 0])
    return Rpy(roll, pitch, yaw, gimbal=False)


def from_rpy(roll: float, pitch: float, yaw: float) -> Quaternion:
    """Inverse of :func:`to_rpy`: Rz(yaw) Ry(pitch) Rx(roll)."""
    qz = Quaternion.from_axis_angle([0, 0, 1], yaw)
    qy = Quaternion.from_axis_angle([0, 1, 0], pitch)
    qx = Quaternion.from_axis_angle([1, 0, 0], roll)
    return qz * qy * qx


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.fmod(a + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi
