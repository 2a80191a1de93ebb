"""Initial hand-eye calibration from checkerboard images and joint logs.

The projection chain for corner ``i`` of image ``j`` is

    pixel(i, j) = project( hand_eye * fk(joints_j) * mount * corner_i(side) )

with ``hand_eye`` the camera-from-base transform being calibrated,
``mount`` the constant board mounting offset on the end-effector
(identity at the start), and ``side`` the board square size.  The solver
refines all thirteen parameters (two poses as translation plus axis-angle
increments on a base rotation, plus the side length) by Levenberg-
Marquardt on the stacked reprojection residuals; distortion is applied
before comparing against detected pixels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from telelens.camera import CameraIntrinsics, distort_normalized, pixel_to_normalized, project
from telelens.camera import MIN_DEPTH, _undistort_batch
from telelens.errors import (
    DegenerateGeometryError,
    InsufficientDataError,
    NonConvergenceError,
    UnobservableError,
)
from telelens.kinematics import KinematicChain, forward_kinematics
from telelens.se3 import Pose, Quaternion, from_rpy, to_rpy

PNP_MIN_POINTS = 6


@dataclass(frozen=True)
class CheckerboardSpec:
    rows: int      # interior corners
    cols: int
    side: float    # meters; initial value of the optimized square size

    def __post_init__(self):
        if self.rows < 3 or self.cols < 3:
            raise ValueError("checkerboard needs at least 3x3 interior corners")
        if self.side <= 0:
            raise ValueError("square size must be positive")

    @property
    def count(self) -> int:
        return self.rows * self.cols

    def corner_points(self, side: float | None = None) -> np.ndarray:
        """Corner ``i = row*cols + col`` sits at (col*side, row*side, 0)."""
        s = self.side if side is None else side
        r, c = np.divmod(np.arange(self.count), self.cols)
        return np.stack([c * s, r * s, np.zeros(self.count)], axis=1)


@dataclass
class CalibrationDataset:
    """Per-image joint vectors and corner observations."""

    joints: np.ndarray        # (m, dof)
    pixels: np.ndarray        # (m, n, 2) observed corners, distorted pixel domain
    visible: np.ndarray       # (m, n) bool

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float)
        self.pixels = np.asarray(self.pixels, dtype=float)
        self.visible = np.asarray(self.visible, dtype=bool)
        if self.joints.ndim != 2 or self.pixels.ndim != 3 or self.pixels.shape[2] != 2:
            raise ValueError("expected joints (m, dof) and pixels (m, n, 2)")
        if self.visible.shape != self.pixels.shape[:2]:
            raise ValueError("visibility mask must be (m, n)")
        if len(self.joints) != len(self.pixels):
            raise ValueError("image counts disagree between joints and pixels")

    @property
    def image_count(self) -> int:
        return len(self.joints)

    @property
    def corner_count(self) -> int:
        return self.pixels.shape[1]

    def save_csv(self, path: str) -> None:
        """Rows: ``joints,<image>,<q...>`` then ``corner,<image>,<id>,<u>,<v>,<vis>``."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for j in range(self.image_count):
                writer.writerow(["joints", j] + [repr(float(v)) for v in self.joints[j]])
                for i in range(self.corner_count):
                    writer.writerow([
                        "corner", j, i,
                        repr(float(self.pixels[j, i, 0])), repr(float(self.pixels[j, i, 1])),
                        int(self.visible[j, i]),
                    ])

    @staticmethod
    def load_csv(path: str) -> "CalibrationDataset":
        joints: dict[int, list[float]] = {}
        corners: dict[int, dict[int, tuple[float, float, bool]]] = {}
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].startswith("#"):
                    continue
                kind = row[0]
                try:
                    if kind == "joints":
                        joints[int(row[1])] = [float(v) for v in row[2:]]
                    elif kind == "corner":
                        img, cid = int(row[1]), int(row[2])
                        corners.setdefault(img, {})[cid] = (
                            float(row[3]), float(row[4]), bool(int(row[5])))
                    else:
                        raise ValueError(f"unknown record type {kind!r}")
                except (IndexError, ValueError) as exc:
                    raise InsufficientDataError(f"{path}:{lineno}: {exc}") from exc
        if not joints:
            raise InsufficientDataError(f"{path}: no joint records")
        images = sorted(joints)
        if images != sorted(corners):
            raise InsufficientDataError(f"{path}: corner/joint image sets disagree")
        n = 1 + max(max(c) for c in corners.values())
        m = len(images)
        pixels = np.zeros((m, n, 2))
        visible = np.zeros((m, n), dtype=bool)
        for row_idx, img in enumerate(images):
            for cid, (u, v, vis) in corners[img].items():
                pixels[row_idx, cid] = (u, v)
                visible[row_idx, cid] = vis
        return CalibrationDataset(np.array([joints[i] for i in images]), pixels, visible)


@dataclass(frozen=True)
class CalibrationResult:
    hand_eye: Pose            # camera from arm base
    mount: Pose               # board from end-effector (constant offset error)
    side: float               # refined square size, meters
    rms_px: float             # per-component RMS reprojection error
    per_image_rms: tuple[float, ...]
    cost: float               # mean over images of summed squared pixel error
    iterations: int
    converged: bool
    cost_trace: tuple[float, ...] = ()   # accepted-step costs, first entry is the init


# ---------------------------------------------------------------------------
# PnP

def _refine_pose_gn(obj: np.ndarray, uv_target: np.ndarray, intr: CameraIntrinsics,
                    rot: np.ndarray, t: np.ndarray, max_iterations: int = 50):
    """Gauss-Newton on undistorted pixel residuals over (axis-angle, t)."""

    def residual(r_mat, t_vec):
        cam = obj @ r_mat.T + t_vec
        z = cam[:, 2]
        if np.any(z <= MIN_DEPTH):
            return None
        uv = np.empty((len(cam), 2))
        uv[:, 0] = intr.fx * cam[:, 0] / z + intr.cx
        uv[:, 1] = intr.fy * cam[:, 1] / z + intr.cy
        return (uv - uv_target).ravel()

    def rot_of(delta, base):
        return Quaternion.from_rotvec(delta).to_matrix() @ base

    r = residual(rot, t)
    if r is None:
        raise NonConvergenceError("initialization places points behind the camera")
    cost = float(r @ r)
    h = 1e-7
    for _ in range(max_iterations):
        jac = np.empty((len(r), 6))
        for k in range(6):
            dp = np.zeros(6); dp[k] = h
            dm = np.zeros(6); dm[k] = -h
            rp = residual(rot_of(dp[:3], rot), t + dp[3:])
            rm = residual(rot_of(dm[:3], rot), t + dm[3:])
            if rp is None or rm is None:
                raise NonConvergenceError("points moved behind the camera during refinement",
                                          residual=math.sqrt(cost / len(r)))
            jac[:, k] = (rp - rm) / (2 * h)
        try:
            step = np.linalg.solve(jac.T @ jac + 1e-12 * np.eye(6), -(jac.T @ r))
        except np.linalg.LinAlgError as exc:
            raise DegenerateGeometryError(f"singular normal equations in refinement: {exc}")
        improved = False
        for scale in (1.0, 0.5, 0.25, 0.125):
            rot_new = rot_of(scale * step[:3], rot)
            t_new = t + scale * step[3:]
            r_new = residual(rot_new, t_new)
            if r_new is not None and float(r_new @ r_new) < cost:
                rot, t, r = rot_new, t_new, r_new
                cost = float(r_new @ r_new)
                improved = True
                break
        if not improved or np.linalg.norm(step) < 1e-12:
            break
    return rot, t, math.sqrt(cost / len(r))


def pnp_solve(object_points, pixels, intr: CameraIntrinsics) -> Pose:
    """Camera-from-object pose from 3D-2D correspondences.

    Pixels are undistorted first; initialization is a homography DLT for
    planar sets and a 3x4 projection DLT otherwise, refined by Gauss-Newton
    on reprojection error in the undistorted pixel domain.
    """
    obj = np.asarray(object_points, dtype=float)
    uv = np.asarray(pixels, dtype=float)
    if obj.ndim != 2 or obj.shape[1] != 3 or uv.shape != (len(obj), 2):
        raise ValueError("expected (N, 3) object points and matching (N, 2) pixels")
    if len(obj) < PNP_MIN_POINTS:
        raise DegenerateGeometryError(f"PnP needs >= {PNP_MIN_POINTS} points, got {len(obj)}")

    und, ok = _undistort_batch(intr, pixel_to_normalized(intr, uv))
    if not ok.all():
        raise DegenerateGeometryError("observed pixels outside the invertible distortion region")
    uv_ideal = np.empty_like(und)
    uv_ideal[:, 0] = intr.fx * und[:, 0] + intr.cx
    uv_ideal[:, 1] = intr.fy * und[:, 1] + intr.cy

    centroid = obj.mean(axis=0)
    centered = obj - centroid
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    if svals[1] < 1e-9 * max(svals[0], 1e-12):
        raise DegenerateGeometryError("object points are collinear")
    planar = svals[2] < 1e-9 * svals[0]

    if planar:
        basis = vt.T  # columns: in-plane e1, e2, normal
        plane_uv = centered @ basis[:, :2]
        rows = []
        for (pu, pv), (x, y) in zip(plane_uv, und):
            rows.append([pu, pv, 1, 0, 0, 0, -x * pu, -x * pv, -x])
            rows.append([0, 0, 0, pu, pv, 1, -y * pu, -y * pv, -y])
        _, _, vh = np.linalg.svd(np.asarray(rows))
        hmat = vh[-1].reshape(3, 3)
        h1, h2, h3 = hmat[:, 0], hmat[:, 1], hmat[:, 2]
        lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
        r1, r2 = lam * h1, lam * h2
        r3 = np.cross(r1, r2)
        rot_plane = np.stack([r1, r2, r3], axis=1)
        u_svd, _, vt_svd = np.linalg.svd(rot_plane)
        rot_plane = u_svd @ np.diag([1, 1, np.linalg.det(u_svd @ vt_svd)]) @ vt_svd
        t_plane = lam * h3
        if t_plane[2] < 0:  # board must sit in front of the camera
            rot_plane = np.stack([-r1, -r2, np.cross(-r1, -r2)], axis=1)
            u_svd, _, vt_svd = np.linalg.svd(rot_plane)
            rot_plane = u_svd @ np.diag([1, 1, np.linalg.det(u_svd @ vt_svd)]) @ vt_svd
            t_plane = -t_plane
        plane_to_obj = np.eye(4)
        plane_to_obj[:3, :3] = basis
        plane_to_obj[:3, 3] = centroid
        rot = rot_plane @ basis.T
        t = t_plane - rot @ centroid
    else:
        rows = []
        for (px, py, pz), (x, y) in zip(obj, und):
            rows.append([px, py, pz, 1, 0, 0, 0, 0, -x * px, -x * py, -x * pz, -x])
            rows.append([0, 0, 0, 0, px, py, pz, 1, -y * px, -y * py, -y * pz, -y])
        mat = np.asarray(rows)
        if np.linalg.matrix_rank(mat) < 11:
            raise DegenerateGeometryError("DLT system is rank-deficient")
        _, _, vh = np.linalg.svd(mat)
        pmat = vh[-1].reshape(3, 4)
        m3 = pmat[:, :3]
        u_svd, svals_m, vt_svd = np.linalg.svd(m3)
        rot = u_svd @ vt_svd
        if np.linalg.det(rot) < 0:
            rot = -rot
            pmat = -pmat
        scale = 3.0 / svals_m.sum()
        t = scale * pmat[:, 3]
        if np.median(obj @ rot.T[:, 2] + t[2]) < 0:
            # flip the twisted-pair ambiguity toward positive depth
            rot = np.diag([-1.0, -1.0, 1.0]) @ rot
            t = np.array([-t[0], -t[1], t[2]])

    rot, t, _rms = _refine_pose_gn(obj, uv_ideal, intr, rot, t)
    return Pose(Quaternion.from_matrix(rot), t)


# ---------------------------------------------------------------------------
# initialization

class InitialEstimate(NamedTuple):
    pose: Pose
    skipped: tuple[int, ...]
    per_image: tuple[Pose, ...]


def average_pose_estimates(poses) -> Pose:
    """Component-wise mean position and circular-mean roll/pitch/yaw."""
    poses = list(poses)
    t = np.mean([p.translation for p in poses], axis=0)
    rpys = np.array([to_rpy(p.rotation)[:3] for p in poses])
    mean_angles = np.arctan2(np.sin(rpys).mean(axis=0), np.cos(rpys).mean(axis=0))
    return Pose(from_rpy(*mean_angles), t)


def initial_handeye(dataset: CalibrationDataset, intr: CameraIntrinsics,
                    chain: KinematicChain, board: CheckerboardSpec) -> InitialEstimate:
    """Averaged per-image hand-eye estimates from PnP and forward kinematics."""
    corners = board.corner_points()
    estimates = []
    skipped = []
    for j in range(dataset.image_count):
        vis = dataset.visible[j]
        if vis.sum() < PNP_MIN_POINTS:
            skipped.append(j)
            continue
        try:
            cam_from_board = pnp_solve(corners[vis], dataset.pixels[j][vis], intr)
        except (DegenerateGeometryError, NonConvergenceError):
            skipped.append(j)
            continue
        fk = forward_kinematics(chain, dataset.joints[j])
        estimates.append(cam_from_board * fk.inverse())
    if len(estimates) < 3:
        raise InsufficientDataError(
            f"only {len(estimates)} of {dataset.image_count} images usable; need >= 3")
    return InitialEstimate(average_pose_estimates(estimates), tuple(skipped), tuple(estimates))


# ---------------------------------------------------------------------------
# nonlinear refinement

class ResidualReport(NamedTuple):
    residuals: np.ndarray   # stacked (2 * visible corner count,)
    excluded: int           # corners dropped for non-positive depth


def _fk_rotations(chain: KinematicChain, joints: np.ndarray):
    mats = np.empty((len(joints), 3, 3))
    trans = np.empty((len(joints), 3))
    for j, q in enumerate(joints):
        fk = forward_kinematics(chain, q)
        mats[j] = fk.rotation.to_matrix()
        trans[j] = fk.translation
    return mats, trans


def _stacked_residuals(r_bc, t_bc, r_em, t_em, side, corners_unit, fk_r, fk_t,
                       pixels, visible, intr) -> ResidualReport:
    """Residuals over all images at once; image-major, corner-minor order."""
    board = corners_unit * side
    in_ee = board @ r_em.T + t_em                       # (n, 3)
    in_base = np.einsum("mij,nj->mni", fk_r, in_ee) + fk_t[:, None, :]
    in_cam = np.einsum("ij,mnj->mni", r_bc, in_base) + t_bc
    z = in_cam[..., 2]
    good = visible & (z > MIN_DEPTH)
    excluded = int((visible & ~(z > MIN_DEPTH)).sum())
    xy = in_cam[good][:, :2] / z[good][:, None]
    xyd = distort_normalized(intr, xy)
    uv = np.empty_like(xyd)
    uv[:, 0] = intr.fx * xyd[:, 0] + intr.cx
    uv[:, 1] = intr.fy * xyd[:, 1] + intr.cy
    return ResidualReport((uv - pixels[good]).ravel(), excluded)


def reprojection_residuals(hand_eye: Pose, mount: Pose, side: float,
                           dataset: CalibrationDataset, intr: CameraIntrinsics,
                           chain: KinematicChain, board: CheckerboardSpec) -> ResidualReport:
    """Stacked (predicted - observed) pixel residuals over visible corners."""
    fk_r, fk_t = _fk_rotations(chain, dataset.joints)
    return _stacked_residuals(
        hand_eye.rotation.to_matrix(), hand_eye.translation,
        mount.rotation.to_matrix(), mount.translation, side,
        board.corner_points(1.0), fk_r, fk_t,
        dataset.pixels, dataset.visible, intr)


_PARAM_NAMES = (
    "hand_eye.tx", "hand_eye.ty", "hand_eye.tz",
    "hand_eye.rx", "hand_eye.ry", "hand_eye.rz",
    "mount.tx", "mount.ty", "mount.tz",
    "mount.rx", "mount.ry", "mount.rz",
    "side",
)


def solve_calibration(dataset: CalibrationDataset, intr: CameraIntrinsics,
                      chain: KinematicChain, board: CheckerboardSpec,
                      init: Pose, mount_init: Pose | None = None,
                      max_iterations: int = 200, cost_tol: float = 1e-10) -> CalibrationResult:
    """Levenberg-Marquardt over hand-eye, mount offset, and square size.

    Rotations are parameterized as axis-angle increments composed onto base
    quaternions, re-anchored after every accepted step.  The mount starts at
    identity and the square size at the board's nominal value.
    """
    mount_init = mount_init or Pose.identity()
    fk_r, fk_t = _fk_rotations(chain, dataset.joints)
    corners_unit = board.corner_points(1.0)
    m = dataset.image_count

    # state: base rotations (anchored), parameter vector of increments
    base_r_bc = init.rotation.to_matrix()
    base_r_em = mount_init.rotation.to_matrix()
    state = np.concatenate([
        init.translation, np.zeros(3),
        mount_init.translation, np.zeros(3),
        [board.side],
    ])

    def unpack(p, anchor_bc, anchor_em):
        r_bc = Quaternion.from_rotvec(p[3:6]).to_matrix() @ anchor_bc
        r_em = Quaternion.from_rotvec(p[9:12]).to_matrix() @ anchor_em
        return r_bc, p[0:3], r_em, p[6:9], p[12]

    def residual_vec(p, anchor_bc, anchor_em):
        r_bc, t_bc, r_em, t_em, side = unpack(p, anchor_bc, anchor_em)
        return _stacked_residuals(r_bc, t_bc, r_em, t_em, side, corners_unit,
                                  fk_r, fk_t, dataset.pixels, dataset.visible, intr).residuals

    def jacobian(p, anchor_bc, anchor_em, r0):
        h = 1e-7
        jac = np.empty((len(r0), 13))
        for k in range(13):
            dp = p.copy(); dp[k] += h
            dm = p.copy(); dm[k] -= h
            jac[:, k] = (residual_vec(dp, anchor_bc, anchor_em)
                         - residual_vec(dm, anchor_bc, anchor_em)) / (2 * h)
        return jac

    r = residual_vec(state, base_r_bc, base_r_em)
    cost = float(r @ r) / m
    cost_trace = [cost]
    jac = jacobian(state, base_r_bc, base_r_em, r)

    # observability check on the column-equilibrated Jacobian
    col_norms = np.linalg.norm(jac, axis=0)
    dead = col_norms < 1e-12 * max(col_norms.max(), 1.0)
    scaled = jac / np.where(dead, 1.0, col_norms)
    svals = np.linalg.svd(scaled, compute_uv=False)
    if dead.any() or svals[-1] < 1e-7 * svals[0]:
        _, _, vt = np.linalg.svd(scaled)
        weights = np.abs(vt[-1])
        names = [name for name, w, d in zip(_PARAM_NAMES, weights, dead)
                 if d or w > 0.25]
        raise UnobservableError(
            "calibration problem is unobservable; vary the joint poses "
            f"(weak directions: {', '.join(names) or 'mixed'})", directions=names)

    mu = 1e-3 * float(np.max(np.sum(jac * jac, axis=0)))
    nu = 2.0
    iterations = 0
    converged = False
    while iterations < max_iterations:
        iterations += 1
        jtj = jac.T @ jac
        g = jac.T @ r
        try:
            step = np.linalg.solve(jtj + mu * np.diag(np.diag(jtj)) + 1e-18 * np.eye(13), -g)
        except np.linalg.LinAlgError as exc:
            raise UnobservableError(f"singular normal equations: {exc}")
        cand = state + step
        r_new = residual_vec(cand, base_r_bc, base_r_em)
        cost_new = float(r_new @ r_new) / m
        if cost_new < cost:
            # re-anchor rotations so increments stay small
            r_bc, t_bc, r_em, t_em, side = unpack(cand, base_r_bc, base_r_em)
            base_r_bc, base_r_em = r_bc, r_em
            state = np.concatenate([t_bc, np.zeros(3), t_em, np.zeros(3), [side]])
            rel_drop = (cost - cost_new) / max(cost, 1e-300)
            r, cost = r_new, cost_new
            cost_trace.append(cost)
            jac = jacobian(state, base_r_bc, base_r_em, r)
            mu /= 3.0
            nu = 2.0
            if rel_drop < cost_tol:
                converged = True
                break
        else:
            mu *= nu
            nu *= 2.0
            if mu > 1e18:
                break

    r_bc, t_bc, r_em, t_em, side = unpack(state, base_r_bc, base_r_em)
    per_image = []
    for j in range(m):
        rep = _stacked_residuals(r_bc, t_bc, r_em, t_em, side, corners_unit,
                                 fk_r[j:j + 1], fk_t[j:j + 1],
                                 dataset.pixels[j:j + 1], dataset.visible[j:j + 1], intr)
        per_image.append(float(np.sqrt(np.mean(rep.residuals**2))) if len(rep.residuals) else 0.0)
    rms = float(np.sqrt(np.mean(r**2))) if len(r) else 0.0
    return CalibrationResult(
        hand_eye=Pose(Quaternion.from_matrix(r_bc), t_bc),
        mount=Pose(Quaternion.from_matrix(r_em), t_em),
        side=float(side),
        rms_px=rms,
        per_image_rms=tuple(per_image),
        cost=cost,
        iterations=iterations,
        converged=converged,
        cost_trace=tuple(cost_trace),
    )


def calibration_cost(hand_eye: Pose, mount: Pose, side: float,
                     dataset: CalibrationDataset, intr: CameraIntrinsics,
                     chain: KinematicChain, board: CheckerboardSpec) -> float:
    """Mean-over-images summed squared pixel error."""
    rep = reprojection_residuals(hand_eye, mount, side, dataset, intr, chain, board)
    return float(rep.residuals @ rep.residuals) / dataset.image_count


# ---------------------------------------------------------------------------
# synthetic data

def make_synthetic_dataset(intr: CameraIntrinsics, chain: KinematicChain,
                           board: CheckerboardSpec, hand_eye: Pose, mount: Pose,
                           side_true: float | None = None, image_count: int = 15,
                           noise_px: float = 0.0, seed: int = 0,
                           base_joints=None) -> CalibrationDataset:
    """Ground-truth projections with Gaussian pixel noise and visibility
    culling; the stand-in for a real corner detector."""
    gen = np.random.default_rng(seed)
    side = board.side if side_true is None else side_true
    corners = board.corner_points(side)
    if base_joints is None:
        base_joints = np.zeros(len(chain))
    base_joints = np.asarray(base_joints, dtype=float)

    joints_rows = []
    pixel_rows = []
    visible_rows = []
    attempts = 0
    while len(joints_rows) < image_count:
        attempts += 1
        if attempts > 500 * image_count:
            raise InsufficientDataError("could not sample enough views with the board in sight")
        j = chain.clamp(base_joints + gen.uniform(-0.45, 0.45, size=len(chain)))
        board_in_cam = hand_eye * forward_kinematics(chain, j) * mount
        pts = board_in_cam.apply(corners)
        z = pts[:, 2]
        if np.any(z <= 0.03):
            continue
        uv = project(intr, pts)
        inside = ((uv[:, 0] >= 0) & (uv[:, 0] <= intr.width - 1)
                  & (uv[:, 1] >= 0) & (uv[:, 1] <= intr.height - 1))
        if inside.sum() < 0.85 * board.count:
            continue
        if noise_px > 0:
            uv = uv + gen.normal(scale=noise_px, size=uv.shape)
        joints_rows.append(j)
        pixel_rows.append(uv)
        visible_rows.append(inside)
    return CalibrationDataset(np.array(joints_rows), np.array(pixel_rows),
                              np.array(visible_rows))
