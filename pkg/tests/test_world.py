import numpy as np
import pytest

from physagent import kinematics as K
from physagent import world as W
from physagent.errors import Unreachable, UnknownObject


@pytest.fixture(scope="module")
def model():
    return K.default_robot()


@pytest.fixture(scope="module")
def camera():
    return K.default_camera()


def scene_with(*objects):
    return W.SceneState(objects=tuple(objects))


def make_observation(model, camera, scene, aperture=0.5):
    return W.observe(model, camera, K.neutral_state(model, aperture), scene)


def cube_scene(pos=(0.25, 0.55), distractor=None):
    objects = [W.SceneObject(id="cube", position=pos)]
    if distractor is not None:
        objects.append(W.SceneObject(id="distractor", position=distractor))
    return scene_with(*objects)


class TestInverseKinematics:
    def test_fk_roundtrip_random_targets(self, model):
        rng = np.random.default_rng(0)
        chain = model.left
        lo = [l for l, _ in chain.joint_limits]
        hi = [h for _, h in chain.joint_limits]
        for _ in range(200):
            q = rng.uniform(lo, hi)
            aperture = rng.uniform(0, 1)
            target = K.chain_tip(chain, q, aperture)
            solved = W.inverse_kinematics(chain, target, np.zeros(6), aperture=aperture)
            err = np.linalg.norm(K.chain_tip(chain, solved, aperture) - target)
            assert err <= 1e-3
            assert np.all(solved >= lo) and np.all(solved <= hi)

    def test_beyond_reach_raises(self, model):
        chain = model.left
        target = np.asarray(chain.base_position) + np.array([chain.reach + 0.05, 0.0])
        with pytest.raises(Unreachable):
            W.inverse_kinematics(chain, target, np.zeros(6))

    def test_full_reach_straight_arm(self, model):
        # At aperture 0 the fingertip aligns with the base orientation, so the
        # farthest point in that direction needs a straight arm.
        chain = model.left
        target = np.asarray(chain.base_position) + np.array([chain.reach, 0.0])
        q = W.inverse_kinematics(chain, target, np.zeros(6), aperture=0.0)
        assert np.linalg.norm(K.chain_tip(chain, q, 0.0) - target) <= 1e-3
        assert np.all(np.abs(q[:5]) < 0.15)


class TestMinJerk:
    def test_profile_boundaries_and_monotonicity(self):
        s = W.min_jerk_profile(40)
        assert s[0] == pytest.approx(0.0)
        assert s[-1] == pytest.approx(1.0)
        assert np.all(np.diff(s) >= -1e-12)

    def test_velocity_vanishes_at_endpoints(self):
        s = W.min_jerk_profile(1001)
        ds = np.diff(s) * 1000
        assert abs(ds[0]) < 0.01 and abs(ds[-1]) < 0.01


class TestSyntheticGenerator:
    def test_five_seconds_at_8fps_gives_40_frames(self, model, camera):
        obs = make_observation(model, camera, cube_scene())
        request = W.RolloutRequest(initial=obs, prompt="grasp object 'cube'")
        goal = W.SubtaskGoal(arm="right", target=(0.25, 0.55), final_aperture=0.05,
                             object_id="cube", skill="Grasp")
        rollout = W.generate_rollout(model, camera, request, goal, W.NO_FAILURES,
                                     np.random.default_rng(1))
        assert len(rollout.frames) == 40
        assert rollout.fps == 8.0

    def test_clean_rollout_reaches_goal_within_5px(self, model, camera):
        rng = np.random.default_rng(2)
        obs = make_observation(model, camera, cube_scene())
        request = W.RolloutRequest(initial=obs, prompt="reach object 'cube'")
        goal = W.SubtaskGoal(arm="right", target=(0.25, 0.55), final_aperture=0.05,
                             object_id="cube", skill="Grasp")
        rollout = W.generate_rollout(model, camera, request, goal, W.NO_FAILURES, rng)
        tip = rollout.frames[-1].points[13]  # right gripper tip
        u, v, visible = tip
        cube_px = camera.scale * np.array([0.25, 0.55]) + np.asarray(camera.offset)
        assert visible
        assert np.hypot(u - cube_px[0], v - cube_px[1]) <= 5.0

    def test_clean_final_frame_goal_over_random_targets(self, model, camera):
        rng = np.random.default_rng(3)
        for _ in range(15):
            # Sample targets in the right arm's workable band.
            angle = rng.uniform(1.0, 2.0)
            radius = rng.uniform(0.60, 0.64)
            target = np.array([0.3, 0.0]) + radius * np.array([np.cos(angle), np.sin(angle)])
            scene = cube_scene(pos=tuple(target))
            obs = make_observation(model, camera, scene)
            request = W.RolloutRequest(initial=obs, prompt="reach object 'cube'")
            goal = W.SubtaskGoal(arm="right", target=tuple(target), final_aperture=0.05,
                                 object_id="cube", skill="Grasp")
            rollout = W.generate_rollout(model, camera, request, goal, W.NO_FAILURES, rng)
            u, v, vis = rollout.frames[-1].points[13]
            px = camera.scale * target + np.asarray(camera.offset)
            assert vis and np.hypot(u - px[0], v - px[1]) <= 5.0

    def test_forced_wrong_object_targets_distractor(self, model, camera):
        scene = cube_scene(pos=(0.25, 0.55), distractor=(0.05, 0.62))
        obs = make_observation(model, camera, scene)
        request = W.RolloutRequest(initial=obs, prompt="grasp object 'cube'")
        goal = W.SubtaskGoal(arm="right", target=(0.25, 0.55), final_aperture=0.05,
                             object_id="cube", skill="Grasp")
        failure = W.FailureConfig(forced_mode=W.FailureMode.WRONG_OBJECT)
        rollout = W.generate_rollout(model, camera, request, goal, failure,
                                     np.random.default_rng(4))
        assert rollout.intended_failure is W.FailureMode.WRONG_OBJECT
        u, v, vis = rollout.frames[-1].points[13]
        px = camera.scale * np.array([0.05, 0.62]) + np.asarray(camera.offset)
        assert vis and np.hypot(u - px[0], v - px[1]) <= 5.0

    def test_kinematic_consistency_of_frames(self, model, camera):
        rng = np.random.default_rng(5)
        obs = make_observation(model, camera, cube_scene())
        request = W.RolloutRequest(initial=obs, prompt="grasp object 'cube'")
        goal = W.SubtaskGoal(arm="right", target=(0.25, 0.55), final_aperture=0.05,
                             object_id="cube", skill="Grasp")
        rollout = W.generate_rollout(model, camera, request, goal,
                                     W.FailureConfig(p_recoverable=0.5), rng)
        assert rollout.joint_trajectory is not None
        lo, hi = model.limits_lo(), model.limits_hi()
        for i, frame in enumerate(rollout.frames):
            q = rollout.joint_trajectory[i]
            assert np.all(q >= lo - 1e-12) and np.all(q <= hi + 1e-12)
            replay = K.project(camera, K.forward_kinematics(
                model, K.JointState(values=q)))
            for (u1, v1, s1), (u2, v2, s2) in zip(frame.points, replay.points):
                assert s1 == s2
                if s1:
                    assert abs(u1 - u2) <= 1e-6 and abs(v1 - v2) <= 1e-6

    def test_same_seed_bit_identical(self, model, camera):
        scene = cube_scene(distractor=(0.05, 0.62))
        obs = make_observation(model, camera, scene)
        request = W.RolloutRequest(initial=obs, prompt="grasp object 'cube'")
        goal = W.SubtaskGoal(arm="right", target=(0.25, 0.55), final_aperture=0.05,
                             object_id="cube", skill="Grasp")
        failure = W.FailureConfig(p_recoverable=0.6, p_irrecoverable=0.1)
        gen = W.SyntheticGenerator(model, camera, failure)
        a = gen.generate(request, goal, np.random.default_rng(99))
        b = gen.generate(request, goal, np.random.default_rng(99))
        assert a.seed == b.seed
        assert a.frames == b.frames
        assert a.intended_failure == b.intended_failure
        assert np.array_equal(a.joint_trajectory, b.joint_trajectory)

    def test_unknown_object_rejected(self, model, camera):
        obs = make_observation(model, camera, cube_scene())
        request = W.RolloutRequest(initial=obs, prompt="grasp object 'ghost'")
        goal = W.SubtaskGoal(arm="right", target=(0.25, 0.55), final_aperture=0.05,
                             object_id="ghost", skill="Grasp")
        with pytest.raises(UnknownObject):
            W.generate_rollout(model, camera, request, goal, W.NO_FAILURES,
                               np.random.default_rng(6))

    def test_premature_release_opens_gripper(self, model, camera):
        obs = make_observation(model, camera, cube_scene())
        request = W.RolloutRequest(initial=obs, prompt="grasp object 'cube'")
        goal = W.SubtaskGoal(arm="right", target=(0.25, 0.55), final_aperture=0.05,
                             object_id="cube", skill="Grasp")
        failure = W.FailureConfig(forced_mode=W.FailureMode.PREMATURE_RELEASE)
        rollout = W.generate_rollout(model, camera, request, goal, failure,
                                     np.random.default_rng(7))
        assert rollout.intended_failure is W.FailureMode.PREMATURE_RELEASE
        final_aperture = rollout.joint_trajectory[-1][13]
        assert final_aperture >= W.OPEN_APERTURE - 1e-9


class TestFailureConfig:
    def test_probability_validation(self):
        with pytest.raises(ValueError):
            W.FailureConfig(p_recoverable=0.7, p_irrecoverable=0.5)
        with pytest.raises(ValueError):
            W.FailureConfig(p_recoverable=-0.1)

    def test_sampling_rates(self):
        failure = W.FailureConfig(p_recoverable=0.5, p_irrecoverable=0.2)
        rng = np.random.default_rng(8)
        draws = [W._sample_failure(failure, rng) for _ in range(4000)]
        n_rec = sum(1 for d in draws if d in W.RECOVERABLE_MODES)
        n_irr = sum(1 for d in draws if d in W.IRRECOVERABLE_MODES)
        assert abs(n_rec / 4000 - 0.5) < 0.03
        assert abs(n_irr / 4000 - 0.2) < 0.03


class TestScene:
    def test_unique_ids_enforced(self):
        with pytest.raises(ValueError):
            scene_with(W.SceneObject(id="a", position=(0, 0)),
                       W.SceneObject(id="a", position=(1, 1)))

    def test_observation_frame_consistent(self, model, camera):
        obs = make_observation(model, camera, cube_scene())
        replay = K.project(camera, K.forward_kinematics(model, obs.joint_state))
        assert obs.frame == replay
