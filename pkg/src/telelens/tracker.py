"""Online EKF tracking of the hand-eye error with PnP re-initialization.

The filter state is a 6-vector (translation, axis-angle) left-correction on
a nominal hand-eye: corrected = correction(error) * base.  The process
model is a random walk; measurements are 2D marker pixels predicted by
projecting atlas points through the corrected hand-eye at the delayed
joint angles.  Large corrections relative to the original calibration
trigger a PnP re-initialization, and the published output is smoothed by
the slerp/IIR blender so step changes never reach the renderer.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from telelens.camera import CameraIntrinsics, MIN_DEPTH, distort_normalized
from telelens.errors import DegenerateGeometryError, InsufficientDataError, NonConvergenceError
from telelens.kinematics import FeatureAtlas, KinematicChain
from telelens.se3 import Pose, Quaternion, SmootherParams, slerp_blend, to_rpy, translation_blend, wrap_angle

H_STEP = 1e-6


@dataclass(frozen=True)
class EkfConfig:
    q_trans: float = 1e-8     # process noise, m^2 per predict per axis
    q_rot: float = 1e-8       # rad^2 per predict per axis
    p0_trans: float = 1e-4    # prior variance, m^2
    p0_rot: float = 1e-4      # rad^2
    sigma_px: float = 1.0     # default observation noise
    gate_chi2: float = 9.21   # 99% chi-square with 2 dof

    @property
    def q_diag(self) -> np.ndarray:
        return np.array([self.q_trans] * 3 + [self.q_rot] * 3)

    @property
    def p0(self) -> np.ndarray:
        return np.diag([self.p0_trans] * 3 + [self.p0_rot] * 3)


@dataclass(frozen=True)
class EkfState:
    base: Pose                 # nominal hand-eye (from calibration or reinit)
    error: np.ndarray          # 6-vector correction, translation then axis-angle
    covariance: np.ndarray     # 6x6 SPD

    def __post_init__(self):
        object.__setattr__(self, "error", np.asarray(self.error, dtype=float).copy())
        object.__setattr__(self, "covariance", np.asarray(self.covariance, dtype=float).copy())
        if self.error.shape != (6,) or self.covariance.shape != (6, 6):
            raise ValueError("error must be (6,) and covariance (6, 6)")

    @property
    def corrected(self) -> Pose:
        """The corrected hand-eye: correction(error) composed onto the base."""
        return correction_pose(self.error) * self.base

    @staticmethod
    def initial(base: Pose, cfg: EkfConfig) -> "EkfState":
        return EkfState(base, np.zeros(6), cfg.p0)


def correction_pose(error: np.ndarray) -> Pose:
    return Pose(Quaternion.from_rotvec(error[3:6]), error[0:3])


class FeatureObservation(NamedTuple):
    feature_id: int
    pixel: np.ndarray
    sigma: float = 1.0


@dataclass(frozen=True)
class ReinitPolicy:
    max_translation: float = 0.020          # meters
    max_rpy: float = math.radians(10.0)     # per-axis, radians

    def __post_init__(self):
        if self.max_translation <= 0 or self.max_rpy <= 0:
            raise ValueError("re-init thresholds must be positive")


@dataclass(frozen=True)
class SmoothedHandEye:
    current: Pose
    params: SmootherParams


def smooth_step(sm: SmoothedHandEye, corrected: Pose) -> SmoothedHandEye:
    """One slerp/IIR blend step toward the corrected transform."""
    return SmoothedHandEye(
        Pose(
            slerp_blend(sm.current.rotation, corrected.rotation, sm.params.a),
            translation_blend(sm.current.translation, corrected.translation, sm.params.a),
        ),
        sm.params,
    )


def predict(state: EkfState, cfg: EkfConfig) -> EkfState:
    """Random-walk prediction: the error persists, uncertainty grows."""
    return replace(state, covariance=state.covariance + np.diag(cfg.q_diag))


def _predict_pixels(error: np.ndarray, base: Pose, world_points: np.ndarray,
                    intr: CameraIntrinsics) -> np.ndarray | None:
    """Project base-frame points through the corrected hand-eye; None when a
    point falls at or behind the camera."""
    corrected = correction_pose(error) * base
    cam = corrected.apply(world_points)
    z = cam[:, 2]
    if np.any(z <= MIN_DEPTH):
        return None
    xy = distort_normalized(intr, cam[:, :2] / z[:, None]) if intr.has_distortion() \
        else cam[:, :2] / z[:, None]
    uv = np.empty_like(xy)
    uv[:, 0] = intr.fx * xy[:, 0] + intr.cx
    uv[:, 1] = intr.fy * xy[:, 1] + intr.cy
    return uv


class UpdateResult(NamedTuple):
    state: EkfState
    gated: int              # observations rejected by the Mahalanobis gate
    starved: bool           # everything gated out; state returned unchanged
    innovation_rms: float   # px, over accepted observations


def update(state: EkfState, observations, j, chain: KinematicChain,
           atlas: FeatureAtlas, intr: CameraIntrinsics, cfg: EkfConfig) -> UpdateResult:
    """Joseph-form EKF update from matched 2D features.

    Innovations are gated per feature at ``cfg.gate_chi2``; gated counts are
    reported and an all-gated update leaves the state untouched with the
    starved flag set.
    """
    observations = list(observations)
    if not observations:
        raise ValueError("update needs at least one observation")
    matched = [(obs, atlas.by_id(obs.feature_id)) for obs in observations]
    points = np.array([fp.point for _, fp in matched])
    links = [fp.link for _, fp in matched]
    from telelens.kinematics import link_poses

    poses = link_poses(chain, j)
    world = np.array([poses[link].apply(p) for link, p in zip(links, points)])

    def h(error):
        return _predict_pixels(error, state.base, world, intr)

    predicted = h(state.error)
    if predicted is None:
        return UpdateResult(state, len(observations), True, 0.0)

    # measurement Jacobian by central differences on the error vector
    jac = np.empty((2 * len(matched), 6))
    for k in range(6):
        ep = state.error.copy(); ep[k] += H_STEP
        em = state.error.copy(); em[k] -= H_STEP
        hp, hm = h(ep), h(em)
        if hp is None or hm is None:
            return UpdateResult(state, len(observations), True, 0.0)
        jac[:, k] = ((hp - hm) / (2 * H_STEP)).ravel()

    pixels = np.array([obs.pixel for obs, _ in matched], dtype=float)
    sigmas = np.array([obs.sigma for obs, _ in matched], dtype=float)
    if np.any(sigmas <= 0):
        raise ValueError("observation sigma must be positive")
    innovations = pixels - predicted

    # per-feature gate against the predicted innovation covariance
    keep = []
    gated = 0
    for idx in range(len(matched)):
        hi = jac[2 * idx: 2 * idx + 2]
        s_i = hi @ state.covariance @ hi.T + sigmas[idx] ** 2 * np.eye(2)
        m2 = float(innovations[idx] @ np.linalg.solve(s_i, innovations[idx]))
        if m2 <= cfg.gate_chi2:
            keep.append(idx)
        else:
            gated += 1
    if not keep:
        return UpdateResult(state, gated, True, 0.0)

    rows = np.array([r for idx in keep for r in (2 * idx, 2 * idx + 1)])
    h_mat = jac[rows]
    nu = innovations[np.array(keep)].ravel()
    r_diag = np.repeat(sigmas[np.array(keep)] ** 2, 2)
    s_mat = h_mat @ state.covariance @ h_mat.T + np.diag(r_diag)
    gain = state.covariance @ h_mat.T @ np.linalg.inv(s_mat)
    new_error = state.error + gain @ nu
    ikh = np.eye(6) - gain @ h_mat
    new_cov = ikh @ state.covariance @ ikh.T + gain @ np.diag(r_diag) @ gain.T
    new_cov = 0.5 * (new_cov + new_cov.T)
    rms = float(np.sqrt(np.mean(nu**2)))
    return UpdateResult(EkfState(state.base, new_error, new_cov), gated, False, rms)


def needs_reinit(corrected: Pose, initial: Pose, policy: ReinitPolicy) -> bool:
    """Threshold test against the original calibration: positional distance
    or any wrap-aware roll/pitch/yaw difference."""
    if np.linalg.norm(corrected.translation - initial.translation) > policy.max_translation:
        return True
    rpy_c = to_rpy(corrected.rotation)
    rpy_i = to_rpy(initial.rotation)
    for a, b in zip(rpy_c[:3], rpy_i[:3]):
        if abs(wrap_angle(a - b)) > policy.max_rpy:
            return True
    return False


def reinit(observations, j, chain: KinematicChain, atlas: FeatureAtlas,
           intr: CameraIntrinsics, cfg: EkfConfig) -> EkfState:
    """Fresh base from PnP on the observed features; zero error, prior P0."""
    from telelens.calibration import pnp_solve
    from telelens.kinematics import link_poses

    observations = list(observations)
    if len(observations) < 6:
        raise InsufficientDataError(f"re-init needs >= 6 features, got {len(observations)}")
    poses = link_poses(chain, j)
    world = np.array([poses[atlas.by_id(o.feature_id).link].apply(atlas.by_id(o.feature_id).point)
                      for o in observations])
    pixels = np.array([o.pixel for o in observations], dtype=float)
    base = pnp_solve(world, pixels, intr)  # camera from chain base
    return EkfState(base, np.zeros(6), cfg.p0)


def covariance_is_spd(cov: np.ndarray, tol: float = 1e-12) -> bool:
    if not np.allclose(cov, cov.T, atol=tol):
        return False
    try:
        np.linalg.cholesky(cov)
        return True
    except np.linalg.LinAlgError:
        return False


class LatestValueCell:
    """Single-writer multi-reader snapshot cell; readers never block the
    writer and always see a complete value."""

    def __init__(self, value=None):
        self._lock = threading.Lock()
        self._value = value

    def publish(self, value) -> None:
        with self._lock:
            self._value = value

    def read(self):
        with self._lock:
            return self._value


class LogRow(NamedTuple):
    sample: int
    error: np.ndarray
    covariance_trace: float
    innovation_rms: float
    gated: int
    reinit: bool


class HandEyeTracker:
    """Per-arm tracking loop: predict/update/re-init plus output smoothing.

    Consumes delayed joints and feature observations, publishes smoothed
    hand-eye snapshots through a latest-value cell, and keeps a CSV-able
    log row per update.
    """

    def __init__(self, calibration: Pose, chain: KinematicChain, atlas: FeatureAtlas,
                 intr: CameraIntrinsics, cfg: EkfConfig | None = None,
                 smoother: SmootherParams | None = None,
                 policy: ReinitPolicy | None = None):
        self.cfg = cfg or EkfConfig()
        self.chain = chain
        self.atlas = atlas
        self.intr = intr
        self.policy = policy or ReinitPolicy()
        self.calibration = calibration
        self.state = EkfState.initial(calibration, self.cfg)
        self.smoothed = SmoothedHandEye(calibration, smoother or SmootherParams(a=0.8))
        self.cell = LatestValueCell(self.smoothed.current)
        self.log: list[LogRow] = []

    def process(self, observations, j, sample: int) -> Pose:
        """One tracker tick; returns the published smoothed hand-eye."""
        self.state = predict(self.state, self.cfg)
        reinitialized = False
        result = update(self.state, observations, j, self.chain, self.atlas,
                        self.intr, self.cfg)
        self.state = result.state
        if needs_reinit(self.state.corrected, self.calibration, self.policy):
            try:
                self.state = reinit(observations, j, self.chain, self.atlas,
                                    self.intr, self.cfg)
                reinitialized = True
            except (InsufficientDataError, DegenerateGeometryError, NonConvergenceError):
                pass  # keep the previous state; logged below as a plain update
        self.smoothed = smooth_step(self.smoothed, self.state.corrected)
        self.cell.publish(self.smoothed.current)
        self.log.append(LogRow(sample, self.state.error.copy(),
                               float(np.trace(self.state.covariance)),
                               result.innovation_rms, result.gated, reinitialized))
        return self.smoothed.current

    def write_log(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample", "err_tx", "err_ty", "err_tz",
                             "err_rx", "err_ry", "err_rz",
                             "cov_trace", "innovation_rms", "gated", "reinit"])
            for row in self.log:
                writer.writerow([row.sample] + [repr(float(v)) for v in row.error]
                                + [repr(row.covariance_trace), repr(row.innovation_rms),
                                   row.gated, int(row.reinit)])
