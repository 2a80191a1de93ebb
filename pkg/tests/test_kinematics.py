import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from telelens.config import chain_from_config, default_config, pose_from_config
from telelens.kinematics import (
    FeatureAtlas,
    FeaturePoint,
    IkResult,
    KinematicChain,
    Link,
    chain_reach,
    forward_kinematics,
    inverse_kinematics,
    link_poses,
)
from telelens.se3 import Pose, Quaternion, rotation_geodesic


def fixed_link(t, lower=-3.0, upper=3.0):
    return Link("revolute", [0, 0, 1], Pose(Quaternion.identity(), t), lower, upper)


def revolute_z(t, lower=-3.0, upper=3.0):
    return Link("revolute", [0, 0, 1], Pose(Quaternion.identity(), t), lower, upper)


def matrix_chain_oracle(chain: KinematicChain, joints):
    """Independent 4x4 product evaluation of the same chain description."""
    T = np.eye(4)
    for link, q in zip(chain.links, joints):
        J = np.eye(4)
        if link.kind == "revolute":
            J[:3, :3] = Rotation.from_rotvec(np.asarray(link.axis) * q).as_matrix()
        else:
            J[:3, 3] = np.asarray(link.axis) * q
        T = T @ J @ link.offset.to_matrix()
    return T


def default_chain():
    return chain_from_config(default_config())


class TestForwardKinematics:
    def test_zero_joints_pure_translations(self):
        chain = KinematicChain((fixed_link([0.1, 0, 0]), fixed_link([0, 0.2, 0]),
                                fixed_link([0, 0, 0.3])))
        pose = forward_kinematics(chain, [0, 0, 0])
        np.testing.assert_allclose(pose.translation, [0.1, 0.2, 0.3], atol=1e-15)

    def test_single_revolute_planar_trig(self):
        L = 0.25
        chain = KinematicChain((Link("revolute", [0, 0, 1],
                                     Pose(Quaternion.identity(), [L, 0, 0]), -3, 3),))
        for theta in [0.0, 0.3, -1.1, math.pi / 2]:
            pose = forward_kinematics(chain, [theta])
            np.testing.assert_allclose(
                pose.translation, [L * math.cos(theta), L * math.sin(theta), 0],
                atol=1e-12,
            )

    def test_default_chain_reference_pose(self):
        doc = default_config()
        chain = chain_from_config(doc)
        ref = doc["chain"]["reference"]
        stored = pose_from_config(ref["pose"])
        fk = forward_kinematics(chain, ref["joints"])
        # against the value frozen alongside the config
        np.testing.assert_allclose(fk.translation, stored.translation, atol=1e-9)
        assert rotation_geodesic(fk.rotation, stored.rotation) < 1e-9
        # and against a freshly evaluated matrix-chain oracle
        oracle = matrix_chain_oracle(chain, ref["joints"])
        np.testing.assert_allclose(fk.to_matrix(), oracle, atol=1e-9)

    def test_prismatic_link(self):
        chain = KinematicChain((Link("prismatic", [0, 0, 1], Pose(), 0.0, 0.5),))
        pose = forward_kinematics(chain, [0.2])
        np.testing.assert_allclose(pose.translation, [0, 0, 0.2], atol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            forward_kinematics(default_chain(), [0, 0, 0])


class TestLinkPoses:
    def test_zero_joint_cumulative_offsets(self):
        chain = KinematicChain((fixed_link([0.1, 0, 0]), fixed_link([0, 0.2, 0])))
        poses = link_poses(chain, [0, 0])
        np.testing.assert_allclose(poses[0].translation, [0.1, 0, 0], atol=1e-15)
        np.testing.assert_allclose(poses[1].translation, [0.1, 0.2, 0], atol=1e-15)

    def test_last_equals_fk(self):
        chain = default_chain()
        gen = np.random.default_rng(7)
        for _ in range(20):
            j = gen.uniform(-1.0, 1.0, size=len(chain))
            poses = link_poses(chain, j)
            fk = forward_kinematics(chain, j)
            np.testing.assert_allclose(poses[-1].to_matrix(), fk.to_matrix(), atol=1e-12)

    def test_two_link_planar_arm(self):
        L1, L2 = 0.3, 0.2
        chain = KinematicChain((revolute_z([L1, 0, 0]), revolute_z([L2, 0, 0])))
        poses = link_poses(chain, [math.pi / 2, 0.0])
        np.testing.assert_allclose(poses[0].translation, [0, L1, 0], atol=1e-12)
        np.testing.assert_allclose(poses[1].translation, [0, L1 + L2, 0], atol=1e-12)

    def test_prefix_consistency(self):
        chain = default_chain()
        gen = np.random.default_rng(11)
        j = gen.uniform(-1.0, 1.0, size=len(chain))
        poses = link_poses(chain, j)
        for k in range(1, len(chain) + 1):
            sub = forward_kinematics(chain.truncated(k), j[:k])
            np.testing.assert_allclose(poses[k - 1].to_matrix(), sub.to_matrix(), atol=1e-12)


class TestInverseKinematics:
    def test_fixed_point(self):
        chain = default_chain()
        j = np.array([0.2, 0.5, -0.3, -1.0, 0.4, 0.6, 0.1])
        result = inverse_kinematics(chain, forward_kinematics(chain, j), j)
        assert result.converged
        assert result.iterations == 0
        np.testing.assert_allclose(result.joints, j, atol=1e-12)

    def test_round_trip_with_perturbed_seed(self):
        chain = default_chain()
        gen = np.random.default_rng(3)
        j = np.array([0.2, 0.5, -0.3, -1.0, 0.4, 0.6, 0.1])
        target = forward_kinematics(chain, j)
        seed = j + gen.normal(scale=0.05, size=len(chain))
        result = inverse_kinematics(chain, target, chain.clamp(seed))
        assert result.converged
        assert result.position_residual < 1e-5
        assert result.rotation_residual < 1e-4

    def test_unreachable_target(self):
        chain = default_chain()
        reach = chain_reach(chain)
        target = Pose(Quaternion.identity(), [0, 0, reach + 0.5])
        result = inverse_kinematics(chain, target, np.zeros(len(chain)))
        assert not result.converged
        trace = np.array(result.residual_trace)
        assert np.all(np.diff(trace) <= 1e-12)  # monotone non-increasing

    def test_fk_ik_round_trip_property(self):
        chain = default_chain()
        gen = np.random.default_rng(2024)
        lo = np.array([l.lower for l in chain.links]) * 0.6
        hi = np.array([l.upper for l in chain.links]) * 0.6
        failures = 0
        for _ in range(1000):
            j = gen.uniform(lo, hi)
            target = forward_kinematics(chain, j)
            seed = chain.clamp(j + gen.normal(scale=0.02, size=len(chain)))
            result = inverse_kinematics(chain, target, seed)
            if not (result.position_residual < 1e-5 and result.rotation_residual < 1e-4):
                failures += 1
        assert failures == 0

    def test_limits_respected(self):
        chain = default_chain()
        target = Pose(Quaternion.identity(), [0.5, 0.5, 0.1])
        result = inverse_kinematics(chain, target, np.zeros(len(chain)))
        lo = np.array([l.lower for l in chain.links])
        hi = np.array([l.upper for l in chain.links])
        assert np.all(result.joints >= lo - 1e-12)
        assert np.all(result.joints <= hi + 1e-12)


class TestFeatureAtlas:
    def test_validate_rejects_bad_link(self):
        atlas = FeatureAtlas((FeaturePoint(12, np.zeros(3), 0),))
        with pytest.raises(ValueError):
            atlas.validate(default_chain())

    def test_world_points_match_link_poses(self):
        chain = default_chain()
        atlas = FeatureAtlas((
            FeaturePoint(2, np.array([0.01, 0.0, -0.02]), 0),
            FeaturePoint(6, np.array([0.0, 0.005, 0.0]), 1),
        ))
        j = np.array([0.2, 0.5, -0.3, -1.0, 0.4, 0.6, 0.1])
        pts = atlas.world_points(chain, j)
        poses = link_poses(chain, j)
        np.testing.assert_allclose(pts[0], poses[2].apply([0.01, 0.0, -0.02]), atol=1e-12)
        np.testing.assert_allclose(pts[1], poses[6].apply([0.0, 0.005, 0.0]), atol=1e-12)


def test_chain_invariants():
    with pytest.raises(ValueError):
        KinematicChain(())
    with pytest.raises(ValueError):
        Link("revolute", [0, 0, 1], Pose(), 1.0, -1.0)
    with pytest.raises(ValueError):
        Link("spherical", [0, 0, 1], Pose(), -1.0, 1.0)
