"""Scenario configuration: schema, strict validation, and shipped defaults.

Configs are YAML documents with fixed sections.  Unknown keys are rejected
with the full key path.  Units throughout: meters, seconds, radians and
pixels; the only exceptions are explicitly suffixed keys (``*_deg``,
``*_px``).

A pose block is either ``{translation: [x,y,z], quaternion: [w,x,y,z]}``
or ``{translation: [x,y,z], rpy_deg: [roll,pitch,yaw]}``.
"""

from __future__ import annotations

import copy
import math
from typing import Any

import numpy as np
import yaml

from telelens.errors import ConfigError
from telelens.kinematics import FeatureAtlas, FeaturePoint, KinematicChain, Link
from telelens.se3 import Pose, Quaternion, from_rpy

# ---------------------------------------------------------------------------
# defaults

# Reference pose frozen from a one-off 4x4 matrix-chain evaluation of the
# default arm; test_kinematics recomputes it with an independent oracle.
_REFERENCE_JOINTS = [0.4, 0.7, -0.3, -1.1, 0.5, 0.9, -0.2]
_REFERENCE_POSE = {
    "translation": [0.080517677765, 0.153015976097, 0.59196725016],
    "quaternion": [0.925243105511, -0.282304033829, 0.198535854875, 0.157521879487],
}

# Camera placed 0.55 m from the wrist, frozen from the same scripted setup.
_TRUE_HANDEYE = {
    "translation": [-0.139639811722, 0.462511354238, 0.825325209487],
    "quaternion": [0.464068070369, 0.855484904346, 0.201952591151, -0.109551610794],
}

_WORK_JOINTS = [0.2, 0.9, -0.3, -1.3, 0.4, 0.6, 0.0]

# marker nubs per link: link index, offset in that link frame, feature id
_DEFAULT_MARKERS = [
    [3, 0.011, 0.0, -0.090, 0],
    [3, -0.008, 0.008, -0.050, 1],
    [3, 0.0, -0.011, -0.015, 2],
    [4, 0.011, 0.0, -0.075, 3],
    [4, -0.008, 0.008, -0.040, 4],
    [4, 0.0, -0.011, -0.010, 5],
    [5, 0.009, 0.0, -0.050, 6],
    [5, -0.007, 0.007, -0.028, 7],
    [5, 0.0, -0.009, -0.006, 8],
    [6, 0.007, 0.0, -0.034, 9],
    [6, -0.006, 0.006, -0.016, 10],
    [6, 0.0, -0.008, 0.0, 11],
]


def default_config() -> dict:
    """The full default configuration document."""
    intr = {
        "fx": 900.0, "fy": 900.0, "cx": 320.0, "cy": 240.0,
        "width": 640, "height": 480,
        "k1": -0.2, "k2": 0.0, "k3": 0.0, "p1": 0.0, "p2": 0.0,
    }
    return {
        "chain": {
            "links": [
                {"kind": "revolute", "axis": [0, 0, 1], "offset": {"translation": [0, 0, 0.12]}, "limits": [-2.96, 2.96]},
                {"kind": "revolute", "axis": [0, 1, 0], "offset": {"translation": [0, 0, 0.12]}, "limits": [-2.09, 2.09]},
                {"kind": "revolute", "axis": [0, 0, 1], "offset": {"translation": [0, 0, 0.12]}, "limits": [-2.96, 2.96]},
                {"kind": "revolute", "axis": [0, 1, 0], "offset": {"translation": [0, 0, 0.12]}, "limits": [-2.09, 2.09]},
                {"kind": "revolute", "axis": [0, 0, 1], "offset": {"translation": [0, 0, 0.10]}, "limits": [-2.96, 2.96]},
                {"kind": "revolute", "axis": [0, 1, 0], "offset": {"translation": [0, 0, 0.07]}, "limits": [-2.09, 2.09]},
                {"kind": "revolute", "axis": [0, 0, 1], "offset": {"translation": [0, 0, 0.05]}, "limits": [-2.96, 2.96]},
            ],
            "reference": {
                "joints": list(_REFERENCE_JOINTS),
                "pose": copy.deepcopy(_REFERENCE_POSE),
            },
        },
        "intrinsics": {"left": dict(intr), "right": dict(intr)},
        "stereo": {
            "right_from_left": {"translation": [-0.005, 0.0, 0.0], "quaternion": [1, 0, 0, 0]},
        },
        "delay": {
            "fs": 100.0,          # samples/second, one clock for the whole loop
            "round_trip": 1.0,    # seconds
            "frame_stride": 3,    # image samples every k-th tick
        },
        "teleop": {
            "scale": 0.2,
            "strict_literal": False,  # integrate against delayed feedback instead of the held command
        },
        "opacity": {
            "l_thresh": 0.0053,   # meters
            "alpha_max": 0.8,
            "r": 100.0,           # opacity per meter of command/feedback distance
        },
        "smoother": {"a": 0.8},
        "ekf": {
            "q_trans": 1.0e-8,    # m^2 added per predict, per axis
            "q_rot": 1.0e-8,      # rad^2 added per predict, per axis
            "p0_trans": 1.0e-4,   # m^2 prior variance
            "p0_rot": 1.0e-4,     # rad^2 prior variance
            "sigma_px": 1.0,      # default per-feature pixel noise
            "gate_chi2": 9.21,    # 99% chi-square, 2 dof
            "reinit_translation": 0.020,          # m
            "reinit_rpy_deg": 10.0,               # per-axis roll/pitch/yaw threshold
        },
        "tool": {"markers": copy.deepcopy(_DEFAULT_MARKERS)},
        "scenario": {
            "seed": 42,
            "duration": 900,      # samples
            "initial_joints": list(_WORK_JOINTS),
            "slave_lag": 0.05,    # s, first-order joint lag time constant
            "feature_noise_px": 1.0,
            "tracking": True,
            "grid_step": 4,       # px, distortion remap grid
            "handeye_true": copy.deepcopy(_TRUE_HANDEYE),
            "handeye_error": {"translation": [0.0, 0.0, 0.0], "rotvec": [0.0, 0.0, 0.0]},
            "trajectory": {
                "kind": "lissajous",
                "amplitude": [0.12, 0.10, 0.08],      # master meters per axis
                "frequency": [0.23, 0.31, 0.19],      # Hz per axis
                "yaw_amplitude": 0.2,                 # radians
                "yaw_frequency": 0.17,                # Hz
            },
        },
        "serve": {
            "port": 8765,
            "frame_stride": 3,     # broadcast every k-th sample
            "png_compress": 1,     # zlib level for wire PNGs
        },
    }


# ---------------------------------------------------------------------------
# validation

_TRAJECTORY_KEYS = {
    "lissajous": {"kind", "amplitude", "frequency", "yaw_amplitude", "yaw_frequency"},
    "step": {"kind", "jump", "at"},
    "handoff": {"kind", "span", "transport", "dwell"},
}

_POSE_KEYS = {"translation", "quaternion", "rpy_deg"}

_SCHEMA: dict[str, Any] = {
    "chain": {"links": None, "reference": {"joints": None, "pose": _POSE_KEYS}},
    "intrinsics": {
        "left": {"fx", "fy", "cx", "cy", "width", "height", "k1", "k2", "k3", "p1", "p2"},
        "right": {"fx", "fy", "cx", "cy", "width", "height", "k1", "k2", "k3", "p1", "p2"},
    },
    "stereo": {"right_from_left": _POSE_KEYS},
    "delay": {"fs", "round_trip", "frame_stride"},
    "teleop": {"scale", "strict_literal"},
    "opacity": {"l_thresh", "alpha_max", "r"},
    "smoother": {"a"},
    "ekf": {"q_trans", "q_rot", "p0_trans", "p0_rot", "sigma_px", "gate_chi2",
            "reinit_translation", "reinit_rpy_deg"},
    "tool": {"markers"},
    "scenario": {
        "seed", "duration", "initial_joints", "slave_lag", "feature_noise_px",
        "tracking", "grid_step", "handeye_true", "handeye_error", "trajectory", "arms",
    },
    "serve": {"port", "frame_stride", "png_compress"},
}

_LINK_KEYS = {"kind", "axis", "offset", "limits"}
_ARM_KEYS = {"handeye_true", "handeye_error", "trajectory"}


def _reject_unknown(section: dict, allowed, path: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected a mapping")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config key {path}.{key}")


def _validate_pose_block(block: dict, path: str) -> None:
    _reject_unknown(block, _POSE_KEYS, path)
    if "translation" not in block:
        raise ConfigError(f"{path}: pose block needs a translation")
    if "quaternion" in block and "rpy_deg" in block:
        raise ConfigError(f"{path}: give quaternion or rpy_deg, not both")


def _validate_trajectory(block: dict, path: str) -> None:
    kind = block.get("kind")
    if kind not in _TRAJECTORY_KEYS:
        raise ConfigError(f"{path}.kind: unknown trajectory kind {kind!r}")
    _reject_unknown(block, _TRAJECTORY_KEYS[kind], path)


def validate_config(doc: dict) -> None:
    """Reject unknown keys anywhere in the document."""
    _reject_unknown(doc, _SCHEMA, "config")
    for section, allowed in _SCHEMA.items():
        if section not in doc:
            continue
        sub = doc[section]
        if isinstance(allowed, dict):
            _reject_unknown(sub, allowed, f"config.{section}")
            for key, inner in allowed.items():
                if inner is not None and key in sub and isinstance(inner, (set, dict)):
                    if key == "links":
                        continue
                    if isinstance(inner, dict):
                        _reject_unknown(sub[key], inner, f"config.{section}.{key}")
                    else:
                        _reject_unknown(sub[key], inner, f"config.{section}.{key}")
        else:
            _reject_unknown(sub, allowed, f"config.{section}")
    if "chain" in doc:
        for i, link in enumerate(doc["chain"].get("links", [])):
            _reject_unknown(link, _LINK_KEYS, f"config.chain.links[{i}]")
            if "offset" in link:
                _validate_pose_block(link["offset"], f"config.chain.links[{i}].offset")
        ref = doc["chain"].get("reference")
        if ref and "pose" in ref:
            _validate_pose_block(ref["pose"], "config.chain.reference.pose")
    if "stereo" in doc and "right_from_left" in doc["stereo"]:
        _validate_pose_block(doc["stereo"]["right_from_left"], "config.stereo.right_from_left")
    scen = doc.get("scenario", {})
    if "trajectory" in scen:
        _validate_trajectory(scen["trajectory"], "config.scenario.trajectory")
    if "handeye_true" in scen:
        _validate_pose_block(scen["handeye_true"], "config.scenario.handeye_true")
    if "handeye_error" in scen:
        _reject_unknown(scen["handeye_error"], {"translation", "rotvec"},
                        "config.scenario.handeye_error")
    for i, arm in enumerate(scen.get("arms") or []):
        _reject_unknown(arm, _ARM_KEYS, f"config.scenario.arms[{i}]")
        if "handeye_true" in arm:
            _validate_pose_block(arm["handeye_true"], f"config.scenario.arms[{i}].handeye_true")
        if "handeye_error" in arm:
            _reject_unknown(arm["handeye_error"], {"translation", "rotvec"},
                            f"config.scenario.arms[{i}].handeye_error")
        if "trajectory" in arm:
            _validate_trajectory(arm["trajectory"], f"config.scenario.arms[{i}].trajectory")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | None = None) -> dict:
    """Load and validate a config file, merged over the defaults.

    ``None`` returns the defaults.  Overriding ``scenario.trajectory`` or
    ``chain.links`` replaces the whole block.
    """
    doc = default_config()
    if path is not None:
        try:
            with open(path) as fh:
                user = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
        if user is None:
            user = {}
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        validate_config(user)
        if "trajectory" in user.get("scenario", {}):
            doc["scenario"]["trajectory"] = {}
        if "links" in user.get("chain", {}):
            doc["chain"]["links"] = []
        doc = _merge(doc, user)
    validate_config(doc)
    return doc


# ---------------------------------------------------------------------------
# builders

def pose_from_config(block: dict) -> Pose:
    t = np.asarray(block["translation"], dtype=float)
    if "quaternion" in block:
        q = Quaternion(*[float(v) for v in block["quaternion"]])
    elif "rpy_deg" in block:
        r, p, y = (math.radians(float(v)) for v in block["rpy_deg"])
        q = from_rpy(r, p, y)
    else:
        q = Quaternion.identity()
    return Pose(q, t)


def pose_to_config(pose: Pose) -> dict:
    q = pose.rotation
    return {
        "translation": [float(v) for v in pose.translation],
        "quaternion": [float(q.w), float(q.x), float(q.y), float(q.z)],
    }


def chain_from_config(doc: dict) -> KinematicChain:
    links = []
    for entry in doc["chain"]["links"]:
        links.append(Link(
            kind=entry["kind"],
            axis=np.asarray(entry["axis"], dtype=float),
            offset=pose_from_config(entry.get("offset", {"translation": [0, 0, 0]})),
            lower=float(entry["limits"][0]),
            upper=float(entry["limits"][1]),
        ))
    return KinematicChain(tuple(links))


def intrinsics_from_config(doc: dict, side: str):
    from telelens.camera import CameraIntrinsics

    block = doc["intrinsics"][side]
    return CameraIntrinsics(
        fx=float(block["fx"]), fy=float(block["fy"]),
        cx=float(block["cx"]), cy=float(block["cy"]),
        width=int(block["width"]), height=int(block["height"]),
        k1=float(block.get("k1", 0.0)), k2=float(block.get("k2", 0.0)),
        k3=float(block.get("k3", 0.0)),
        p1=float(block.get("p1", 0.0)), p2=float(block.get("p2", 0.0)),
    )


def rig_from_config(doc: dict):
    from telelens.camera import StereoRig

    return StereoRig(
        left=intrinsics_from_config(doc, "left"),
        right=intrinsics_from_config(doc, "right"),
        right_from_left=pose_from_config(doc["stereo"]["right_from_left"]),
    )


def atlas_from_config(doc: dict) -> FeatureAtlas:
    points = []
    for link, x, y, z, fid in doc["tool"]["markers"]:
        points.append(FeaturePoint(int(link), np.array([x, y, z], dtype=float), int(fid)))
    return FeatureAtlas(tuple(points))


def correction_from_config(block: dict) -> Pose:
    """Injected-miscalibration block: translation plus rotation-vector."""
    return Pose(
        Quaternion.from_rotvec(np.asarray(block.get("rotvec", [0, 0, 0]), dtype=float)),
        np.asarray(block.get("translation", [0, 0, 0]), dtype=float),
    )


def dump_config(doc: dict, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
