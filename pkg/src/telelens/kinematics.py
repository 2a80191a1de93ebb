"""Serial-chain kinematics: forward maps and damped least-squares IK.

A chain is an ordered list of links.  Each link contributes its joint motion
(rotation about, or translation along, an axis expressed in the parent
frame) followed by a fixed transform to the next link frame:

    T_base_link[k] = prod_{i<=k} joint_motion(axis_i, j_i) * offset_i

Joint values are radians for revolute links and meters for prismatic ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from telelens.se3 import Pose, Quaternion

MAX_LINKS = 10
JACOBIAN_STEP = 1e-6


@dataclass(frozen=True)
class Link:
    kind: Literal["revolute", "prismatic"]
    axis: np.ndarray
    offset: Pose
    lower: float
    upper: float

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic"):
            raise ValueError(f"unknown joint kind {self.kind!r}")
        axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(axis)
        if n < 1e-12:
            raise ValueError("joint axis must be nonzero")
        axis = axis / n
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        if not self.lower < self.upper:
            raise ValueError("joint limits must satisfy lower < upper")


@dataclass(frozen=True)
class KinematicChain:
    links: tuple[Link, ...]

    def __post_init__(self):
        links = tuple(self.links)
        if not 1 <= len(links) <= MAX_LINKS:
            raise ValueError(f"chain must have 1..{MAX_LINKS} links, got {len(links)}")
        object.__setattr__(self, "links", links)

    def __len__(self) -> int:
        return len(self.links)

    def clamp(self, j: np.ndarray) -> np.ndarray:
        lo = np.array([l.lower for l in self.links])
        hi = np.array([l.upper for l in self.links])
        return np.clip(j, lo, hi)

    def truncated(self, count: int) -> "KinematicChain":
        return KinematicChain(self.links[:count])

    @property
    def _program(self):
        """Per-link scalars for the tight FK loop, built once."""
        cached = self.__dict__.get("_program_cache")
        if cached is None:
            cached = tuple(
                (
                    link.kind == "revolute",
                    float(link.axis[0]), float(link.axis[1]), float(link.axis[2]),
                    float(link.offset.rotation.w), float(link.offset.rotation.x),
                    float(link.offset.rotation.y), float(link.offset.rotation.z),
                    float(link.offset.translation[0]), float(link.offset.translation[1]),
                    float(link.offset.translation[2]),
                )
                for link in self.links
            )
            object.__setattr__(self, "_program_cache", cached)
        return cached


class FeaturePoint(NamedTuple):
    link: int
    point: np.ndarray  # in that link's frame, meters
    feature_id: int


@dataclass(frozen=True)
class FeatureAtlas:
    """Known marker points on the tool, addressed by link frame."""

    points: tuple[FeaturePoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    def validate(self, chain: KinematicChain) -> None:
        for fp in self.points:
            if not 0 <= fp.link < len(chain):
                raise ValueError(f"feature {fp.feature_id} references link {fp.link} "
                                 f"outside chain of {len(chain)} links")

    def by_id(self, feature_id: int) -> FeaturePoint:
        for fp in self.points:
            if fp.feature_id == feature_id:
                return fp
        raise KeyError(f"no feature with id {feature_id}")

    def world_points(self, chain: KinematicChain, j) -> np.ndarray:
        """(N, 3) feature positions in the chain base frame."""
        states = _fk_states(chain, _check_joints(chain, j))
        out = np.empty((len(self.points), 3))
        for row, fp in enumerate(self.points):
            out[row] = _state_apply(states[fp.link], fp.point)
        return out


def _check_joints(chain: KinematicChain, j) -> np.ndarray:
    j = np.asarray(j, dtype=float)
    if j.shape != (len(chain),):
        raise ValueError(f"joint vector length {j.shape} does not match "
                         f"chain of {len(chain)} links")
    return j


# A link state is the tuple (qw, qx, qy, qz, tx, ty, tz) of its base-frame
# pose; the tight loops below stay on scalars to keep FK cheap inside
# numerical Jacobians.

def _fk_states(chain: KinematicChain, j: np.ndarray):
    qw, qx, qy, qz = 1.0, 0.0, 0.0, 0.0
    tx, ty, tz = 0.0, 0.0, 0.0
    states = []
    for (revolute, ax, ay, az, ow, ox, oy, oz, vx, vy, vz), value in zip(chain._program, j):
        if revolute:
            half = 0.5 * value
            s, mw = math.sin(half), math.cos(half)
            mx, my, mz = ax * s, ay * s, az * s
            # current * motion (motion translation is zero)
            qw, qx, qy, qz = (
                qw * mw - qx * mx - qy * my - qz * mz,
                qw * mx + qx * mw + qy * mz - qz * my,
                qw * my - qx * mz + qy * mw + qz * mx,
                qw * mz + qx * my - qy * mx + qz * mw,
            )
        else:
            dx, dy, dz = ax * value, ay * value, az * value
            rx, ry, rz = _rotate_scalar(qw, qx, qy, qz, dx, dy, dz)
            tx, ty, tz = tx + rx, ty + ry, tz + rz
        # * offset
        rx, ry, rz = _rotate_scalar(qw, qx, qy, qz, vx, vy, vz)
        tx, ty, tz = tx + rx, ty + ry, tz + rz
        qw, qx, qy, qz = (
            qw * ow - qx * ox - qy * oy - qz * oz,
            qw * ox + qx * ow + qy * oz - qz * oy,
            qw * oy - qx * oz + qy * ow + qz * ox,
            qw * oz + qx * oy - qy * ox + qz * ow,
        )
        states.append((qw, qx, qy, qz, tx, ty, tz))
    return states


def _rotate_scalar(qw, qx, qy, qz, vx, vy, vz):
    # v + 2 q_vec x (q_vec x v + w v)
    cx = qy * vz - qz * vy + qw * vx
    cy = qz * vx - qx * vz + qw * vy
    cz = qx * vy - qy * vx + qw * vz
    return (
        vx + 2.0 * (qy * cz - qz * cy),
        vy + 2.0 * (qz * cx - qx * cz),
        vz + 2.0 * (qx * cy - qy * cx),
    )


def _state_apply(state, point) -> np.ndarray:
    qw, qx, qy, qz, tx, ty, tz = state
    rx, ry, rz = _rotate_scalar(qw, qx, qy, qz, float(point[0]), float(point[1]), float(point[2]))
    return np.array([rx + tx, ry + ty, rz + tz])


def _state_to_pose(state) -> Pose:
    qw, qx, qy, qz, tx, ty, tz = state
    return Pose(Quaternion(qw, qx, qy, qz), np.array([tx, ty, tz]))


def link_poses(chain: KinematicChain, j) -> list[Pose]:
    """Pose of every link frame in the base frame; last equals the end-effector."""
    j = _check_joints(chain, j)
    return [_state_to_pose(s) for s in _fk_states(chain, j)]


def forward_kinematics(chain: KinematicChain, j) -> Pose:
    """End-effector pose in the chain base frame."""
    j = _check_joints(chain, j)
    return _state_to_pose(_fk_states(chain, j)[-1])


class IkResult(NamedTuple):
    joints: np.ndarray
    converged: bool
    position_residual: float  # meters
    rotation_residual: float  # radians
    iterations: int
    residual_trace: tuple[float, ...]  # accepted-step combined residual norms


def _pose_error_scalar(target_q, target_t, state) -> np.ndarray:
    """6-vector [position; rotation-vector] of target relative to the state."""
    qw, qx, qy, qz, tx, ty, tz = state
    tw2, tx2, ty2, tz2 = target_q
    # dq = q_target * conj(q_state)
    dw = tw2 * qw + tx2 * qx + ty2 * qy + tz2 * qz
    dx = -tw2 * qx + tx2 * qw - ty2 * qz + tz2 * qy
    dy = -tw2 * qy + tx2 * qz + ty2 * qw - tz2 * qx
    dz = -tw2 * qz - tx2 * qy + ty2 * qx + tz2 * qw
    s = math.sqrt(dx * dx + dy * dy + dz * dz)
    if dw < 0.0:
        dw, dx, dy, dz = -dw, -dx, -dy, -dz
    if s < 1e-12:
        rvx, rvy, rvz = 2.0 * dx, 2.0 * dy, 2.0 * dz
    else:
        scale = 2.0 * math.atan2(s, dw) / s
        rvx, rvy, rvz = dx * scale, dy * scale, dz * scale
    return np.array([target_t[0] - tx, target_t[1] - ty, target_t[2] - tz,
                     rvx, rvy, rvz])


def inverse_kinematics(
    chain: KinematicChain,
    target: Pose,
    seed,
    pos_tol: float = 1e-5,
    rot_tol: float = 1e-4,
    damping: float = 0.01,
    max_iterations: int = 200,
) -> IkResult:
    """Damped least-squares IK with a numerical Jacobian.

    Joint limits are enforced by clamping after each step.  Steps that would
    increase the residual are rejected with temporarily raised damping, so
    the accepted-residual trace is monotonically non-increasing.  When the
    tolerances are not met within the iteration budget the best joints seen
    are still returned with ``converged=False``; callers may render them as
    a best-effort prediction.
    """
    j = chain.clamp(_check_joints(chain, seed))
    n = len(chain)
    tq = (target.rotation.w, target.rotation.x, target.rotation.y, target.rotation.z)
    tt = (float(target.translation[0]), float(target.translation[1]),
          float(target.translation[2]))

    def residuals(joints):
        e = _pose_error_scalar(tq, tt, _fk_states(chain, joints)[-1])
        return e, math.hypot(e[0], e[1], e[2]), math.hypot(e[3], e[4], e[5])

    err, pos_res, rot_res = residuals(j)
    trace = [float(np.linalg.norm(err))]
    iterations = 0
    lam = damping
    while iterations < max_iterations:
        if pos_res < pos_tol and rot_res < rot_tol:
            return IkResult(j, True, pos_res, rot_res, iterations, tuple(trace))
        # numerical 6xN Jacobian, central differences
        jac = np.empty((6, n))
        for k in range(n):
            jp = j.copy(); jp[k] += JACOBIAN_STEP
            jm = j.copy(); jm[k] -= JACOBIAN_STEP
            ep, _, _ = residuals(jp)
            em, _, _ = residuals(jm)
            jac[:, k] = (ep - em) / (2 * JACOBIAN_STEP)
        accepted = False
        while not accepted and lam < 1e6:
            step = np.linalg.solve(jac.T @ jac + lam**2 * np.eye(n), -(jac.T @ err))
            j_new = chain.clamp(j + step)
            err_new, pos_new, rot_new = residuals(j_new)
            if np.linalg.norm(err_new) <= np.linalg.norm(err):
                j, err, pos_res, rot_res = j_new, err_new, pos_new, rot_new
                trace.append(float(np.linalg.norm(err)))
                lam = damping
                accepted = True
            else:
                lam *= 10.0
        iterations += 1
        if not accepted:
            break  # stuck against limits or a singular direction
    converged = pos_res < pos_tol and rot_res < rot_tol
    return IkResult(j, converged, pos_res, rot_res, iterations, tuple(trace))


def chain_reach(chain: KinematicChain) -> float:
    """Loose upper bound on end-effector distance from the base."""
    total = 0.0
    for link in chain.links:
        total += float(np.linalg.norm(link.offset.translation))
        if link.kind == "prismatic":
            total += max(abs(link.lower), abs(link.upper))
    return total
