import math

import numpy as np
import pytest

from telelens.errors import NotEngagedError
from telelens.se3 import Pose, Quaternion, rotation_geodesic
from telelens.teleop import TeleopParams, TeleopState


def pose_at(t, q=None):
    return Pose(q or Quaternion.identity(), t)


class TestEngage:
    def test_engage_zero_motion_holds_feedback_position(self):
        st = TeleopState(TeleopParams(scale=0.2))
        master = pose_at([0.5, 0.1, 0.0])
        st.engage(pose_at([0.100, 0.050, 0.0]), master)
        cmd = st.step(master)
        np.testing.assert_allclose(cmd.translation, [0.100, 0.050, 0.0], atol=1e-15)

    def test_reengage_no_jump(self):
        st = TeleopState(TeleopParams(scale=0.2))
        st.engage(pose_at([0.1, 0.0, 0.0]), pose_at([0.0, 0.0, 0.0]))
        st.step(pose_at([0.02, 0.0, 0.0]))
        st.disengage()
        # master moved while disengaged; first command after re-engage
        # equals the feedback reference
        st.engage(pose_at([0.104, 0.0, 0.0]), pose_at([0.5, 0.5, 0.5]))
        cmd = st.step(pose_at([0.5, 0.5, 0.5]))
        np.testing.assert_allclose(cmd.translation, [0.104, 0.0, 0.0], atol=1e-15)

    def test_engage_assigns_reference(self):
        st = TeleopState(TeleopParams())
        st.engage(pose_at([0.1, 0.05, 0.0]), pose_at([0, 0, 0]))
        np.testing.assert_allclose(st.reference, [0.1, 0.05, 0.0])


class TestStep:
    def test_hand_evaluated_increment(self):
        st = TeleopState(TeleopParams(scale=0.2))
        st.engage(pose_at([0.100, 0.050, 0.0]), pose_at([0.0, 0.0, 0.0]))
        cmd = st.step(pose_at([0.010, 0.0, 0.0]))
        np.testing.assert_allclose(cmd.translation, [0.102, 0.050, 0.0], atol=1e-15)

    def test_zero_increment_keeps_reference(self):
        st = TeleopState(TeleopParams(scale=0.2))
        master = pose_at([0.3, -0.2, 0.1])
        st.engage(pose_at([0.1, 0.0, 0.0]), master)
        for _ in range(5):
            cmd = st.step(master)
        np.testing.assert_allclose(cmd.translation, [0.1, 0.0, 0.0], atol=1e-15)

    def test_orientation_passthrough(self):
        st = TeleopState(TeleopParams(scale=0.2))
        st.engage(pose_at([0, 0, 0]), pose_at([0, 0, 0]))
        q = Quaternion.from_axis_angle([0, 0, 1], math.radians(30))
        cmd = st.step(pose_at([0, 0, 0], q))
        assert rotation_geodesic(cmd.rotation, q) < 1e-12

    def test_not_engaged(self):
        st = TeleopState(TeleopParams())
        with pytest.raises(NotEngagedError):
            st.step(pose_at([0, 0, 0]))

    def test_path_length_scaling(self):
        gen = np.random.default_rng(8)
        st = TeleopState(TeleopParams(scale=0.2))
        prev = pose_at([0.0, 0.0, 0.0])
        st.engage(pose_at([0.1, 0.1, 0.1]), prev)
        master_len = 0.0
        cmd_len = 0.0
        prev_cmd = st.step(prev)
        prev_master = prev
        for _ in range(500):
            master = pose_at(prev_master.translation + gen.normal(scale=0.003, size=3))
            cmd = st.step(master)
            master_len += float(np.linalg.norm(master.translation - prev_master.translation))
            cmd_len += float(np.linalg.norm(cmd.translation - prev_cmd.translation))
            prev_master, prev_cmd = master, cmd
        assert abs(cmd_len - 0.2 * master_len) < 1e-12

    def test_strict_literal_mode_tracks_feedback(self):
        st = TeleopState(TeleopParams(scale=0.5, strict_literal=True))
        st.engage(pose_at([0.1, 0.0, 0.0]), pose_at([0.0, 0.0, 0.0]))
        cmd = st.step(pose_at([0.01, 0.0, 0.0]), delayed_slave_position=[0.2, 0.0, 0.0])
        np.testing.assert_allclose(cmd.translation, [0.205, 0.0, 0.0], atol=1e-15)
        with pytest.raises(ValueError):
            st.step(pose_at([0.0, 0.0, 0.0]))


def test_params_invariants():
    with pytest.raises(ValueError):
        TeleopParams(scale=0.0)
    with pytest.raises(ValueError):
        TeleopParams(scale=1.5)
