import json

import numpy as np
import pytest

from physagent import kinematics as K
from physagent.errors import ConfigError, LimitViolation


def make_chain(**overrides):
    defaults = dict(
        link_lengths=(0.1,) * 6,
        joint_limits=tuple([(-np.pi, np.pi)] * 5 + [(-2 * np.pi, 2 * np.pi)]),
        gripper_link=0.1,
        base_position=(0.0, 0.0),
        base_orientation=0.0,
    )
    defaults.update(overrides)
    return K.KinematicChain(**defaults)


def bimanual(chain):
    right = K.KinematicChain(
        link_lengths=chain.link_lengths, joint_limits=chain.joint_limits,
        gripper_link=chain.gripper_link, base_position=(0.6, 0.0),
        base_orientation=np.pi, grip_base=chain.grip_base,
        grip_swing=chain.grip_swing)
    return K.RobotModel(left=chain, right=right)


def state_with(model, left_joints=(0,) * 6, left_ap=0.5, right_joints=(0,) * 6,
               right_ap=0.5):
    values = np.zeros(14)
    values[0:6] = left_joints
    values[6] = left_ap
    values[7:13] = right_joints
    values[13] = right_ap
    return K.JointState(values=values)


class TestForwardKinematics:
    def test_straight_chain(self):
        # Closed gripper points along the base orientation, so the whole arm
        # lies on the x axis.
        model = bimanual(make_chain())
        state = state_with(model, left_ap=0.0)
        pts = K.forward_kinematics(model, state)
        assert np.allclose(pts[:7, 0], [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6], atol=1e-12)
        assert np.allclose(pts[:7, 1], 0.0, atol=1e-12)

    def test_pure_rotation_first_joint(self):
        # Fully open gripper swings the fingertip to +pi/2 in the world, so
        # at q1 = pi/2 every left point sits on the +y axis.
        model = bimanual(make_chain())
        state = state_with(model, left_joints=(np.pi / 2, 0, 0, 0, 0, 0), left_ap=1.0)
        pts = K.forward_kinematics(model, state)
        assert np.allclose(pts[:7, 0], 0.0, atol=1e-12)
        assert np.allclose(pts[:7, 1], [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6], atol=1e-12)

    def test_matches_rotation_composition_oracle(self):
        def rot(a):
            return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])

        def oracle(chain, joints, aperture):
            pts = [np.asarray(chain.base_position, dtype=float)]
            R = rot(chain.base_orientation)
            for k in range(5):
                R = R @ rot(joints[k])
                pts.append(pts[-1] + R @ np.array([chain.link_lengths[k], 0.0]))
            Rg = rot(chain.grip_angle(aperture))
            pts.append(pts[5] + Rg @ np.array([chain.gripper_link, 0.0]))
            return np.array(pts)

        model = K.default_robot()
        rng = np.random.default_rng(42)
        lo, hi = model.limits_lo(), model.limits_hi()
        for _ in range(50):
            state = K.JointState(values=rng.uniform(lo, hi))
            pts = K.forward_kinematics(model, state)
            for arm, sl in (("left", slice(0, 7)), ("right", slice(7, 14))):
                chain = model.chain(arm)
                expect = oracle(chain, state.joints(arm), state.aperture(arm))
                assert np.allclose(pts[sl], expect, atol=1e-9)

    def test_link_length_invariant(self):
        model = K.default_robot()
        rng = np.random.default_rng(7)
        lo, hi = model.limits_lo(), model.limits_hi()
        for _ in range(100):
            pts = K.forward_kinematics(model, K.JointState(values=rng.uniform(lo, hi)))
            assert pts.shape == (14, 2)
            for arm, off in (("left", 0), ("right", 7)):
                chain = model.chain(arm)
                gaps = np.linalg.norm(np.diff(pts[off:off + 7], axis=0), axis=1)
                assert np.allclose(gaps[:5], chain.link_lengths[:5], atol=1e-9)
                assert abs(gaps[5] - chain.gripper_link) <= 1e-9

    def test_rejects_out_of_limit_state(self):
        model = K.default_robot()
        values = np.zeros(14)
        values[6] = values[13] = 0.5
        values[3] = 1.5  # joint 4 limit is +-0.4
        with pytest.raises(LimitViolation):
            K.forward_kinematics(model, K.JointState(values=values))


class TestProjection:
    def test_offset_only(self):
        camera = K.CameraModel(scale=100.0, offset=(320.0, 240.0), image_size=(640, 480))
        pts = np.zeros((14, 2))
        frame = K.project(camera, pts)
        assert frame.points[0] == (320.0, 240.0, True)

    def test_out_of_bounds_invisible(self):
        camera = K.CameraModel(scale=100.0, offset=(320.0, 240.0), image_size=(640, 480))
        pts = np.zeros((14, 2))
        pts[3] = (10.0, 0.0)  # u = 1320, outside 640
        frame = K.project(camera, pts)
        assert frame.points[3][2] is False
        assert frame.points[0][2] is True

    def test_project_unproject_roundtrip(self):
        rng = np.random.default_rng(3)
        for flip in (False, True):
            camera = K.CameraModel(scale=200.0, offset=(320.0, 240.0),
                                   image_size=(640, 480), flip_x=flip)
            world = rng.uniform(-1.0, 1.0, (14, 2))
            frame = K.project(camera, world)
            for i, (u, v, vis) in enumerate(frame.points):
                if vis:
                    assert np.allclose(K.unproject(camera, (u, v)), world[i], atol=1e-9)


class TestStep:
    def test_fixed_point(self):
        model = K.default_robot()
        state = K.neutral_state(model)
        out = K.step(model, state, state, dt=0.1)
        assert np.array_equal(out.values, state.values)
        assert out.timestamp == pytest.approx(0.1)

    def test_rate_clamp_arithmetic(self):
        chain = make_chain()
        model = K.RobotModel(left=chain, right=make_chain(base_position=(0.6, 0.0),
                                                          base_orientation=np.pi),
                             rate_limits=(0.5,) * 14)
        current = K.neutral_state(model)
        command_values = current.values.copy()
        command_values[0] += 1.0
        out = K.step(model, current, K.JointState(values=command_values), dt=0.1)
        assert out.values[0] == pytest.approx(0.05)

    def test_converges_within_clamped_bound(self):
        model = K.default_robot()
        rng = np.random.default_rng(5)
        lo, hi = model.limits_lo(), model.limits_hi()
        for _ in range(20):
            current = K.JointState(values=rng.uniform(lo, hi))
            command = K.JointState(values=rng.uniform(lo, hi))
            dt = 0.05
            gap = np.max(np.abs(command.values - current.values)
                         / np.asarray(model.rate_limits))
            bound = int(np.ceil(gap / dt)) + 1
            state = current
            for _ in range(bound):
                state = K.step(model, state, command, dt)
            assert np.allclose(state.values, command.values, atol=1e-6)

    def test_never_leaves_limits_and_bounded_step(self):
        model = K.default_robot()
        rng = np.random.default_rng(11)
        lo, hi = model.limits_lo(), model.limits_hi()
        state = K.neutral_state(model)
        max_step = np.asarray(model.rate_limits) * 0.1
        for _ in range(200):
            command = K.JointState(values=rng.uniform(lo - 1.0, hi + 1.0).clip(lo, hi))
            new = K.step(model, state, command, dt=0.1)
            assert np.all(new.values >= lo - 1e-12) and np.all(new.values <= hi + 1e-12)
            assert np.all(np.abs(new.values - state.values) <= max_step + 1e-12)
            state = new


class TestConfigIO:
    def test_robot_json_roundtrip(self, tmp_path):
        model = K.default_robot()
        camera = K.default_camera()
        path = tmp_path / "robot.json"
        K.save_robot(path, model, camera)
        loaded = K.load_robot(path)
        assert loaded == model
        assert K.load_camera(path) == camera

    def test_missing_robot_config(self, tmp_path):
        with pytest.raises(ConfigError):
            K.load_robot(tmp_path / "nope.json")

    def test_invalid_robot_config(self, tmp_path):
        path = tmp_path / "robot.json"
        path.write_text(json.dumps({"left": {}}))
        with pytest.raises(ConfigError):
            K.load_robot(path)
