import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation, Slerp

from telelens.se3 import (
    Pose,
    Quaternion,
    compose,
    from_rpy,
    rotation_geodesic,
    slerp_blend,
    to_rpy,
    translation_blend,
    wrap_angle,
)


def rng():
    return np.random.default_rng(1234)


def random_quat(gen):
    v = gen.normal(size=4)
    return Quaternion(*(v / np.linalg.norm(v)))


def random_pose(gen):
    return Pose(random_quat(gen), gen.normal(scale=0.5, size=3))


def pose_matrix_oracle(rot_axis, rot_angle, t):
    """Independent 4x4 builder used to cross-check compose()."""
    m = np.eye(4)
    m[:3, :3] = Rotation.from_rotvec(np.asarray(rot_axis) * rot_angle).as_matrix()
    m[:3, 3] = t
    return m


def quat_of(pose: Pose) -> np.ndarray:
    return pose.rotation.as_array()


class TestQuaternion:
    def test_constructor_normalizes(self):
        q = Quaternion(2.0, 0.0, 0.0, 0.0)
        assert abs(q.w - 1.0) < 1e-12

    def test_zero_quaternion_rejected(self):
        with pytest.raises(ValueError):
            Quaternion(0.0, 0.0, 0.0, 0.0)

    def test_norm_after_multiply(self):
        gen = rng()
        for _ in range(200):
            q = random_quat(gen) * random_quat(gen)
            assert abs(np.linalg.norm(q.as_array()) - 1.0) < 1e-9

    def test_double_cover_equality(self):
        gen = rng()
        q = random_quat(gen)
        neg = Quaternion(-q.w, -q.x, -q.y, -q.z)
        assert q.rotation_equals(neg)

    def test_rotate_matches_matrix(self):
        gen = rng()
        for _ in range(50):
            q = random_quat(gen)
            v = gen.normal(size=3)
            np.testing.assert_allclose(q.rotate(v), q.to_matrix() @ v, atol=1e-12)

    def test_matrix_round_trip(self):
        gen = rng()
        for _ in range(100):
            q = random_quat(gen)
            q2 = Quaternion.from_matrix(q.to_matrix())
            assert rotation_geodesic(q, q2) < 1e-9


class TestCompose:
    def test_identity_case(self):
        gen = rng()
        p = random_pose(gen)
        out = compose(Pose.identity(), p)
        np.testing.assert_allclose(out.translation, p.translation, atol=1e-12)
        assert rotation_geodesic(out.rotation, p.rotation) < 1e-12

    def test_inverse_case(self):
        gen = rng()
        for _ in range(100):
            p = random_pose(gen)
            ident = compose(p, p.inverse())
            assert np.linalg.norm(ident.translation) < 1e-9
            assert rotation_geodesic(ident.rotation, Quaternion.identity()) < 1e-9

    def test_rz90_chain_matches_matrix_oracle(self):
        # Rz(90)+t(1,0,0) composed with Rz(90) -> Rz(180)+t(1,0,0)
        a = Pose(Quaternion.from_axis_angle([0, 0, 1], math.pi / 2), [1, 0, 0])
        b = Pose(Quaternion.from_axis_angle([0, 0, 1], math.pi / 2), [0, 0, 0])
        out = compose(a, b)
        oracle = pose_matrix_oracle([0, 0, 1], math.pi / 2, [1, 0, 0]) @ \
            pose_matrix_oracle([0, 0, 1], math.pi / 2, [0, 0, 0])
        np.testing.assert_allclose(out.to_matrix(), oracle, atol=1e-12)
        expected = Pose(Quaternion.from_axis_angle([0, 0, 1], math.pi), [1, 0, 0])
        assert rotation_geodesic(out.rotation, expected.rotation) < 1e-12
        np.testing.assert_allclose(out.translation, expected.translation, atol=1e-12)

    def test_associativity_against_matrices(self):
        gen = rng()
        for _ in range(50):
            a, b, c = (random_pose(gen) for _ in range(3))
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            np.testing.assert_allclose(left.to_matrix(), right.to_matrix(), atol=1e-9)
            np.testing.assert_allclose(
                left.to_matrix(), a.to_matrix() @ b.to_matrix() @ c.to_matrix(), atol=1e-9
            )

    def test_apply_is_b_then_a(self):
        gen = rng()
        a, b = random_pose(gen), random_pose(gen)
        p = gen.normal(size=3)
        np.testing.assert_allclose(compose(a, b).apply(p), a.apply(b.apply(p)), atol=1e-12)


class TestSlerpBlend:
    def test_coincident_inputs(self):
        gen = rng()
        q = random_quat(gen)
        out = slerp_blend(q, q, 0.8)
        assert rotation_geodesic(out, q) < 1e-12

    def test_against_scipy_slerp_oracle(self):
        # independent textbook slerp evaluated at t = a
        q0 = Quaternion.identity()
        q1 = Quaternion.from_axis_angle([0, 0, 1], math.pi / 2)
        out = slerp_blend(q0, q1, 0.8)
        key = Rotation.from_quat([
            [q0.x, q0.y, q0.z, q0.w],
            [q1.x, q1.y, q1.z, q1.w],
        ])
        oracle = Slerp([0.0, 1.0], key)(0.8)
        ox, oy, oz, ow = oracle.as_quat()
        assert rotation_geodesic(out, Quaternion(ow, ox, oy, oz)) < 1e-9
        # spot value: Rz(72 deg)
        np.testing.assert_allclose(
            out.as_array(),
            [math.cos(math.radians(36)), 0, 0, math.sin(math.radians(36))],
            atol=1e-9,
        )

    def test_random_pairs_match_scipy(self):
        gen = rng()
        for _ in range(100):
            qp, qn = random_quat(gen), random_quat(gen)
            a = float(gen.uniform(0.05, 0.95))
            out = slerp_blend(qp, qn, a)
            key = Rotation.from_quat([[qp.x, qp.y, qp.z, qp.w], [qn.x, qn.y, qn.z, qn.w]])
            oracle = Slerp([0.0, 1.0], key)(a)
            ox, oy, oz, ow = oracle.as_quat()
            assert rotation_geodesic(out, Quaternion(ow, ox, oy, oz)) < 1e-7

    def test_antipodal_double_cover(self):
        gen = rng()
        q = random_quat(gen)
        neg = Quaternion(-q.w, -q.x, -q.y, -q.z)
        out = slerp_blend(q, neg, 0.3)
        assert rotation_geodesic(out, q) < 1e-9

    def test_non_unit_input_rejected(self):
        q = Quaternion.identity()
        bad = Quaternion.identity()
        object.__setattr__(bad, "w", 2.0)  # bypass constructor normalization
        with pytest.raises(ValueError):
            slerp_blend(q, bad, 0.5)

    def test_geodesic_proportionality(self):
        gen = rng()
        for _ in range(200):
            q1, q2 = random_quat(gen), random_quat(gen)
            a = float(gen.uniform(0.0, 1.0))
            out = slerp_blend(q1, q2, a)
            assert abs(
                rotation_geodesic(out, q1) - a * rotation_geodesic(q1, q2)
            ) < 1e-7


class TestTranslationBlend:
    def test_fixed_point(self):
        p = np.array([0.1, -0.2, 0.3])
        np.testing.assert_allclose(translation_blend(p, p, 0.4), p)

    def test_hand_evaluated_step(self):
        out = translation_blend([0, 0, 0], [0.010, 0, 0], 0.8)
        np.testing.assert_allclose(out, [0.008, 0, 0], atol=1e-15)

    def test_passthrough_at_one(self):
        out = translation_blend([1, 2, 3], [4, 5, 6], 1.0)
        np.testing.assert_allclose(out, [4, 5, 6])

    def test_affine_on_segment(self):
        gen = rng()
        for _ in range(100):
            p1, p2 = gen.normal(size=3), gen.normal(size=3)
            a = float(gen.uniform(0, 1))
            out = translation_blend(p1, p2, a)
            # exactly on the segment: out - p1 parallel to p2 - p1 with ratio a
            np.testing.assert_allclose(out - p1, a * (p2 - p1), atol=1e-15)


class TestRotationGeodesic:
    def test_zero_for_same(self):
        gen = rng()
        q = random_quat(gen)
        assert rotation_geodesic(q, q) < 1e-12

    def test_axis_angle_oracle(self):
        q = Quaternion.from_axis_angle([0, 0, 1], math.pi / 2)
        assert abs(rotation_geodesic(Quaternion.identity(), q) - math.pi / 2) < 1e-12

    def test_double_cover_zero(self):
        gen = rng()
        q = random_quat(gen)
        neg = Quaternion(-q.w, -q.x, -q.y, -q.z)
        assert rotation_geodesic(q, neg) < 1e-12

    def test_matches_scipy_magnitude(self):
        gen = rng()
        for _ in range(100):
            q1, q2 = random_quat(gen), random_quat(gen)
            r1 = Rotation.from_quat([q1.x, q1.y, q1.z, q1.w])
            r2 = Rotation.from_quat([q2.x, q2.y, q2.z, q2.w])
            oracle = (r1.inv() * r2).magnitude()
            assert abs(rotation_geodesic(q1, q2) - oracle) < 1e-9


class TestRpy:
    def test_identity(self):
        out = to_rpy(Quaternion.identity())
        assert out == (0.0, 0.0, 0.0, False)

    def test_pure_yaw_matches_matrix_oracle(self):
        q = Quaternion.from_axis_angle([0, 0, 1], math.radians(30))
        out = to_rpy(q)
        oracle = Rotation.from_matrix(q.to_matrix()).as_euler("ZYX")  # yaw, pitch, roll
        np.testing.assert_allclose([out.yaw, out.pitch, out.roll], oracle, atol=1e-12)
        np.testing.assert_allclose(
            [out.roll, out.pitch, out.yaw], [0, 0, math.radians(30)], atol=1e-12
        )

    def test_extrinsic_xyz_composition_decomposes(self):
        # apply Rx(10) first, then Ry(20), then Rz(30) about fixed axes
        q = (
            Quaternion.from_axis_angle([0, 0, 1], math.radians(30))
            * Quaternion.from_axis_angle([0, 1, 0], math.radians(20))
            * Quaternion.from_axis_angle([1, 0, 0], math.radians(10))
        )
        out = to_rpy(q)
        np.testing.assert_allclose(
            np.degrees([out.roll, out.pitch, out.yaw]), [10, 20, 30], atol=1e-9
        )

    def test_round_trip_random(self):
        gen = rng()
        for _ in range(200):
            q = random_quat(gen)
            out = to_rpy(q)
            if out.gimbal:
                continue
            q2 = from_rpy(out.roll, out.pitch, out.yaw)
            assert rotation_geodesic(q, q2) < 1e-9

    def test_gimbal_flagged_with_zero_roll(self):
        q = from_rpy(math.radians(25), math.pi / 2, math.radians(40))
        out = to_rpy(q)
        assert out.gimbal
        assert out.roll == 0.0
        # the represented rotation is still reproduced
        q2 = from_rpy(out.roll, out.pitch, out.yaw)
        assert rotation_geodesic(q, q2) < 1e-6


def test_wrap_angle():
    assert abs(wrap_angle(3 * math.pi) - math.pi) < 1e-12
    assert abs(wrap_angle(-3 * math.pi) - math.pi) < 1e-12
    assert abs(wrap_angle(0.3) - 0.3) < 1e-15
    yaw_diff = wrap_angle(math.radians(179) - math.radians(-179))
    assert abs(abs(yaw_diff) - math.radians(2)) < 1e-12


def test_group_property_random_poses():
    gen = rng()
    for _ in range(100):
        p = random_pose(gen)
        q = random_pose(gen)
        # closure + inverse consistency through matrices
        np.testing.assert_allclose(
            compose(p, q).to_matrix(), p.to_matrix() @ q.to_matrix(), atol=1e-9
        )
        ident = compose(p.inverse(), p)
        assert np.linalg.norm(ident.translation) < 1e-9
        assert rotation_geodesic(ident.rotation, Quaternion.identity()) < 1e-9
