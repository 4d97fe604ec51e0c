"""Rollout generation: the desk-scale stand-in for an image-to-video model.

A rollout here is a timed sequence of keypoint frames. The synthetic
generator plans a joint trajectory (damped-least-squares IK to the subtask
goal, minimum-jerk time profile) and renders it through forward kinematics
and the camera, so every rollout is kinematically consistent by
construction. Failure injection perturbs the *goal* (wrong object, offset,
premature release, boundary drop), never individual frames, which keeps the
ground truth of each rollout crisp.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import NoConvergence, Unreachable, UnknownObject
from .kinematics import (
    CameraModel,
    JointState,
    KeypointFrame,
    KinematicChain,
    RobotModel,
    chain_tip,
    forward_kinematics,
    project,
)

DEFAULT_DURATION_S = 5.0
DEFAULT_FPS = 8.0

# Gripper aperture thresholds shared with the executor's grasp/release rules.
OPEN_APERTURE = 0.9
CLOSED_APERTURE = 0.05


class FailureMode(str, Enum):
    WRONG_OBJECT = "WrongObject"
    PREMATURE_RELEASE = "PrematureRelease"
    OFFSET_GOAL = "OffsetGoal"
    DROP_OUT_OF_REACH = "DropOutOfReach"


RECOVERABLE_MODES = (FailureMode.WRONG_OBJECT, FailureMode.PREMATURE_RELEASE,
                     FailureMode.OFFSET_GOAL)
IRRECOVERABLE_MODES = (FailureMode.DROP_OUT_OF_REACH,)

OFFSET_GOAL_DISTANCE = 0.13
BOUNDARY_RELEASE_MARGIN = 0.08


@dataclass(frozen=True)
class SceneObject:
    id: str
    position: tuple[float, float]
    graspable: bool = True
    grasped_by: str | None = None
    in_reach: bool = True

    def pos(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)


@dataclass(frozen=True)
class SceneState:
    objects: tuple[SceneObject, ...]

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique")
        for o in self.objects:
            if o.grasped_by not in (None, "left", "right"):
                raise ValueError(f"unknown arm {o.grasped_by!r}")

    def get(self, object_id: str) -> SceneObject:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise UnknownObject(f"no object {object_id!r} in scene")

    def has(self, object_id: str) -> bool:
        return any(o.id == object_id for o in self.objects)

    def held_by(self, arm: str) -> SceneObject | None:
        for o in self.objects:
            if o.grasped_by == arm:
                return o
        return None

    def with_object(self, obj: SceneObject) -> "SceneState":
        return SceneState(objects=tuple(obj if o.id == obj.id else o for o in self.objects))


@dataclass(frozen=True)
class Observation:
    """One snapshot of the episode: image keypoints plus ground truth."""

    frame: KeypointFrame
    scene: SceneState
    joint_state: JointState
    time: float = 0.0


def observe(model: RobotModel, camera: CameraModel, state: JointState,
            scene: SceneState, time: float = 0.0) -> Observation:
    """Build an Observation whose frame is consistent with the joint state."""
    frame = project(camera, forward_kinematics(model, state))
    return Observation(frame=frame, scene=scene, joint_state=state, time=time)


@dataclass(frozen=True)
class Rollout:
    frames: tuple[KeypointFrame, ...]
    fps: float
    prompt: str
    generator_id: str
    seed: int
    intended_failure: FailureMode | None = None
    joint_trajectory: np.ndarray | None = None

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("a rollout needs at least 2 frames")
        if self.fps <= 0:
            raise ValueError("fps must be positive")


@dataclass(frozen=True)
class RolloutRequest:
    initial: Observation
    prompt: str
    duration: float = DEFAULT_DURATION_S
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if round(self.duration * self.fps) < 2:
            raise ValueError("duration * fps must cover at least 2 frames")


@dataclass(frozen=True)
class FailureConfig:
    p_recoverable: float = 0.0
    p_irrecoverable: float = 0.0
    mode_weights: dict = field(default_factory=lambda: {m: 1.0 for m in FailureMode})
    forced_mode: FailureMode | None = None

    def __post_init__(self):
        if not (0.0 <= self.p_recoverable <= 1.0 and 0.0 <= self.p_irrecoverable <= 1.0):
            raise ValueError("failure probabilities must lie in [0, 1]")
        if self.p_recoverable + self.p_irrecoverable > 1.0 + 1e-12:
            raise ValueError("failure probabilities must sum to at most 1")


NO_FAILURES = FailureConfig()


@dataclass(frozen=True)
class SubtaskGoal:
    """Structured geometric goal the generator plans toward."""

    arm: str
    target: tuple[float, float]
    final_aperture: float
    object_id: str
    skill: str = ""

    def target_xy(self) -> np.ndarray:
        return np.asarray(self.target, dtype=float)


# ---------------------------------------------------------------------------
# Inverse kinematics
# ---------------------------------------------------------------------------

def _wrap_angle(a: float) -> float:
    return float((a + np.pi) % (2 * np.pi) - np.pi)


def _curl_init(chain: KinematicChain, wrist_vec: np.ndarray, sign: float) -> np.ndarray:
    """Closed-form warm start: curl joints 2-5 uniformly toward their limits
    until the wrist radius matches, then aim the shoulder at the target."""
    d = float(np.linalg.norm(wrist_vec))
    bends = np.array([chain.joint_limits[k][1] if sign > 0 else chain.joint_limits[k][0]
                      for k in range(1, 5)])

    def wrist_at(s: float) -> complex:
        cum = np.concatenate([[0.0], np.cumsum(s * bends)])
        return complex(sum(L * np.exp(1j * c) for L, c in zip(chain.link_lengths[:5], cum)))

    lo_s, hi_s = 0.0, 1.0
    if d >= abs(wrist_at(0.0)):
        s = 0.0
    elif d <= abs(wrist_at(1.0)):
        s = 1.0
    else:
        for _ in range(40):
            mid = 0.5 * (lo_s + hi_s)
            if abs(wrist_at(mid)) > d:
                lo_s = mid
            else:
                hi_s = mid
        s = 0.5 * (lo_s + hi_s)
    total = wrist_at(s)
    bearing = float(np.arctan2(wrist_vec[1], wrist_vec[0]))
    q = np.zeros(6)
    q[0] = _wrap_angle(bearing - np.angle(total) - chain.base_orientation)
    q[1:5] = s * bends
    return q


def _dls_solve(chain: KinematicChain, target: np.ndarray, q0: np.ndarray,
               aperture: float, tol: float, max_iter: int, damping: float):
    lo = np.array([l for l, _ in chain.joint_limits])
    hi = np.array([h for _, h in chain.joint_limits])
    q = np.clip(np.asarray(q0, dtype=float).copy(), lo, hi)
    eps = 1e-6
    for _ in range(max_iter):
        tip = chain_tip(chain, q, aperture)
        err = target - tip
        if np.hypot(err[0], err[1]) <= tol:
            return q
        J = np.empty((2, 6))
        for k in range(6):
            dq = np.zeros(6)
            dq[k] = eps
            J[:, k] = (chain_tip(chain, q + dq, aperture) - tip) / eps
        step = J.T @ np.linalg.solve(J @ J.T + (damping ** 2) * np.eye(2), err)
        biggest = np.max(np.abs(step))
        if biggest > 0.5:
            step *= 0.5 / biggest
        q = np.clip(q + step, lo, hi)
    return None


def inverse_kinematics(chain: KinematicChain, target, init,
                       aperture: float = 0.5, tol: float = 1e-3,
                       max_iter: int = 300, damping: float = 0.05) -> np.ndarray:
    """Damped-least-squares IK for one arm's fingertip.

    Raises Unreachable when the target lies beyond the arm's reach (scalar
    bound, plus the exact bound after peeling off the aperture-determined
    fingertip offset), and NoConvergence when the iteration (including a few
    deterministic restarts) fails to bring the tip within tol.
    """
    target = np.asarray(target, dtype=float)
    base = np.asarray(chain.base_position)
    if np.linalg.norm(target - base) > chain.reach + 1e-12:
        raise Unreachable(
            f"target at {np.linalg.norm(target - base):.3f} m exceeds reach {chain.reach:.3f} m")
    # The fingertip offset direction is fixed by the aperture, so the wrist
    # must land exactly gripper_link away from the target along it.
    phi = chain.grip_angle(aperture)
    wrist_target = target - chain.gripper_link * np.array([np.cos(phi), np.sin(phi)])
    if np.linalg.norm(wrist_target - base) > chain.chain_reach + 1e-12:
        raise Unreachable(
            f"wrist target at {np.linalg.norm(wrist_target - base):.3f} m exceeds "
            f"chain reach {chain.chain_reach:.3f} m at aperture {aperture:.2f}")
    init = np.asarray(init, dtype=float)
    wrist_vec = wrist_target - base
    starts = (init,
              _curl_init(chain, wrist_vec, +1.0),
              _curl_init(chain, wrist_vec, -1.0),
              np.zeros(6))
    for q0 in starts:
        q = _dls_solve(chain, target, q0, aperture, tol, max_iter, damping)
        if q is not None:
            return q
    raise NoConvergence(f"IK failed to reach {target.tolist()} within {max_iter} iterations")


# ---------------------------------------------------------------------------
# Trajectory shaping
# ---------------------------------------------------------------------------

def min_jerk_profile(n_frames: int) -> np.ndarray:
    """Normalized minimum-jerk position profile s(tau) over n_frames samples."""
    tau = np.linspace(0.0, 1.0, n_frames)
    return 10 * tau ** 3 - 15 * tau ** 4 + 6 * tau ** 5


def _skill_aperture_profile(skill: str, n_frames: int, start: float,
                            final: float) -> np.ndarray:
    """Aperture timeline for one rollout, shaped by the skill.

    Grasps travel open and close only on arrival (guaranteeing the downward
    crossing the executor's grasp rule needs, even after a failed attempt
    left the gripper shut); pushes make a fist before contact; everything
    else holds the current aperture and switches late, so carried objects
    are not dropped mid-path.
    """
    tau = np.linspace(0.0, 1.0, n_frames)
    if skill == "Grasp":
        knots = [0.0, 0.15, 0.85, 1.0]
        values = [start, OPEN_APERTURE, OPEN_APERTURE, final]
    elif skill == "Push":
        knots = [0.0, 0.2, 1.0]
        values = [start, final, final]
    else:
        knots = [0.0, 0.85, 1.0]
        values = [start, start, final]
    return np.interp(tau, knots, values)


def _premature_release_profile(profile: np.ndarray) -> np.ndarray:
    """Force the gripper open from 60% of the trajectory onward."""
    tau = np.linspace(0.0, 1.0, profile.size)
    at_onset = float(np.interp(0.6, tau, profile))
    ramp = np.clip((tau - 0.6) / 0.2, 0.0, 1.0)
    return np.where(tau < 0.6, profile, at_onset + (OPEN_APERTURE - at_onset) * ramp)


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

def _weighted_pick(rng: np.random.Generator, modes, weights: dict) -> FailureMode | None:
    pool = [(m, float(weights.get(m, 0.0))) for m in modes if weights.get(m, 0.0) > 0]
    if not pool:
        return None
    total = sum(w for _, w in pool)
    u = rng.random() * total
    acc = 0.0
    for mode, w in pool:
        acc += w
        if u <= acc:
            return mode
    return pool[-1][0]


def _sample_failure(failure: FailureConfig, rng: np.random.Generator) -> FailureMode | None:
    if failure.forced_mode is not None:
        return failure.forced_mode
    u = rng.random()
    if u < failure.p_irrecoverable:
        return _weighted_pick(rng, IRRECOVERABLE_MODES, failure.mode_weights)
    if u < failure.p_irrecoverable + failure.p_recoverable:
        return _weighted_pick(rng, RECOVERABLE_MODES, failure.mode_weights)
    return None


def _nearest_distractor(scene: SceneState, object_id: str, point: np.ndarray):
    best = None
    best_d = np.inf
    for obj in sorted(scene.objects, key=lambda o: o.id):
        if obj.id == object_id:
            continue
        d = float(np.linalg.norm(obj.pos() - point))
        if d < best_d:
            best, best_d = obj, d
    return best


def _boundary_release_point(model: RobotModel, arm: str) -> np.ndarray:
    """A reachable point near this arm's reach boundary, away from the other arm."""
    chain = model.chain(arm)
    other = model.chain("right" if arm == "left" else "left")
    base = np.asarray(chain.base_position)
    away = base - np.asarray(other.base_position)
    away = away / np.linalg.norm(away)
    return base + (chain.reach - BOUNDARY_RELEASE_MARGIN) * away


class SyntheticGenerator:
    """Deterministic IK-planned rollout generator with failure injection."""

    def __init__(self, model: RobotModel, camera: CameraModel,
                 failure: FailureConfig = NO_FAILURES,
                 generator_id: str = "synthetic-minjerk-v1"):
        self.model = model
        self.camera = camera
        self.failure = failure
        self.generator_id = generator_id

    def generate(self, request: RolloutRequest, goal: SubtaskGoal,
                 rng: np.random.Generator) -> Rollout:
        seed = int(rng.integers(0, 2 ** 63))
        return self._generate_seeded(request, goal, seed)

    def _generate_seeded(self, request: RolloutRequest, goal: SubtaskGoal,
                         seed: int) -> Rollout:
        local = np.random.default_rng(seed)
        scene = request.initial.scene
        if not scene.has(goal.object_id):
            raise UnknownObject(f"prompt references unknown object {goal.object_id!r}")

        mode = _sample_failure(self.failure, local)
        target = goal.target_xy()
        final_aperture = goal.final_aperture
        premature = False
        perturbed = False

        if mode is FailureMode.DROP_OUT_OF_REACH and scene.held_by(goal.arm) is None:
            # Nothing to drop; degrade to a recoverable miss.
            mode = FailureMode.OFFSET_GOAL
        if mode is FailureMode.WRONG_OBJECT:
            distractor = _nearest_distractor(scene, goal.object_id, target)
            if distractor is None:
                mode = FailureMode.OFFSET_GOAL
            else:
                target = distractor.pos()
                perturbed = True
        if mode is FailureMode.OFFSET_GOAL:
            angle = local.random() * 2 * np.pi
            target = target + OFFSET_GOAL_DISTANCE * np.array([np.cos(angle), np.sin(angle)])
            perturbed = True
        elif mode is FailureMode.PREMATURE_RELEASE:
            premature = True
        elif mode is FailureMode.DROP_OUT_OF_REACH:
            target = _boundary_release_point(self.model, goal.arm)
            final_aperture = OPEN_APERTURE
            perturbed = True

        chain = self.model.chain(goal.arm)
        if perturbed:
            # A failure-perturbed target may land outside the workable band;
            # pull it back inside so the rollout still renders. Unperturbed
            # goals keep their genuine Unreachable errors.
            base = np.asarray(chain.base_position)
            offset = target - base
            dist = np.linalg.norm(offset)
            outer = chain.chain_reach + 0.5 * chain.gripper_link
            inner = chain.min_chain_reach + 1.5 * chain.gripper_link
            clamped = min(max(dist, inner), outer)
            if clamped != dist and dist > 1e-9:
                target = base + offset * (clamped / dist)

        state0 = request.initial.joint_state
        aperture_profile = _skill_aperture_profile(
            goal.skill, int(round(request.duration * request.fps)),
            state0.aperture(goal.arm), final_aperture)
        if premature:
            aperture_profile = _premature_release_profile(aperture_profile)
        final_aperture = float(aperture_profile[-1])

        q_goal = inverse_kinematics(chain, target, state0.joints(goal.arm),
                                    aperture=final_aperture)

        n_frames = aperture_profile.size
        s = min_jerk_profile(n_frames)
        joint_slice, aperture_index = self.model.arm_slices(goal.arm)

        traj = np.tile(state0.values, (n_frames, 1))
        q0 = state0.joints(goal.arm)
        traj[:, joint_slice] = q0[None, :] + s[:, None] * (q_goal - q0)[None, :]
        traj[:, aperture_index] = aperture_profile

        dt = 1.0 / request.fps
        frames = []
        for i in range(n_frames):
            st = JointState(values=traj[i], timestamp=state0.timestamp + i * dt)
            frames.append(project(self.camera, forward_kinematics(self.model, st)))

        return Rollout(
            frames=tuple(frames),
            fps=request.fps,
            prompt=request.prompt,
            generator_id=self.generator_id,
            seed=seed,
            intended_failure=mode,
            joint_trajectory=traj,
        )


def generate_rollout(model: RobotModel, camera: CameraModel, request: RolloutRequest,
                     goal: SubtaskGoal, failure: FailureConfig,
                     rng: np.random.Generator) -> Rollout:
    """Convenience wrapper around SyntheticGenerator for one-off rollouts."""
    return SyntheticGenerator(model, camera, failure).generate(request, goal, rng)


def point_in_reach(model: RobotModel, point, margin: float = 0.0) -> bool:
    """True when either arm's fingertip can reach the point."""
    p = np.asarray(point, dtype=float)
    for arm in ("left", "right"):
        chain = model.chain(arm)
        if np.linalg.norm(p - np.asarray(chain.base_position)) <= chain.reach - margin:
            return True
    return False


def point_in_annulus(chain: KinematicChain, point, margin: float = 0.0) -> bool:
    """True when the point lies in the arm's workable annulus: far enough out
    that the limited distal joints need not over-curl, and inside reach."""
    d = float(np.linalg.norm(np.asarray(point, dtype=float)
                             - np.asarray(chain.base_position)))
    return chain.min_chain_reach + margin <= d <= chain.reach - margin
