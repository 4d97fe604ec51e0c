"""Planar kinematic model of a bimanual 6-joint-plus-gripper robot.

The robot lives in a 2D desk plane. Each arm is a serial chain of revolute
joints; keypoints are the joint origins plus one visible fingertip per arm,
14 points overall, ordered left J1..J6, left tip, right J1..J6, right tip.
An affine camera maps plane coordinates to pixels.

Conventions baked into the geometry:

* Joints 1-5 displace the chain in the plane. Joint 6 is a wrist roll about
  the tool axis: its rotation is invisible in the 2D projection (it moves no
  keypoint), which is what makes it the wide-motion-range joint whose state
  cannot be recovered from images.
* The gripper is self-leveling: the wrist keeps the tool frame aligned with
  the base frame, so the visible fingertip sits ``gripper_link`` metres from
  the joint-6 origin at the world-fixed angle ``base_orientation +
  grip_base + grip_swing * (aperture - 0.5)``. A closed gripper points along
  the base orientation; opening swings the fingertip through ``grip_swing``
  radians, leaving the aperture's trace in every frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, LimitViolation

# Command vector layout: 0-5 left joints, 6 left aperture, 7-12 right joints,
# 13 right aperture.
COMMAND_DIM = 14
KEYPOINT_COUNT = 14
JOINTS_PER_ARM = 6
LEFT_SLICE = slice(0, 6)
LEFT_APERTURE = 6
RIGHT_SLICE = slice(7, 13)
RIGHT_APERTURE = 13

KEYPOINT_NAMES = tuple(
    [f"left_j{i}" for i in range(1, 7)]
    + ["left_tip"]
    + [f"right_j{i}" for i in range(1, 7)]
    + ["right_tip"]
)


@dataclass(frozen=True)
class KinematicChain:
    """One planar arm: six revolute joints plus a self-leveling gripper."""

    link_lengths: tuple[float, ...]
    joint_limits: tuple[tuple[float, float], ...]
    gripper_link: float
    base_position: tuple[float, float]
    base_orientation: float
    grip_base: float = np.pi / 4
    grip_swing: float = np.pi / 2
    joint_count: int = JOINTS_PER_ARM

    def __post_init__(self):
        if self.joint_count != JOINTS_PER_ARM:
            raise ValueError(f"joint_count must be {JOINTS_PER_ARM}")
        if len(self.link_lengths) != JOINTS_PER_ARM:
            raise ValueError("expected 6 link lengths")
        if any(l <= 0 for l in self.link_lengths):
            raise ValueError("link lengths must be positive")
        if self.gripper_link <= 0:
            raise ValueError("gripper link must be positive")
        if len(self.joint_limits) != JOINTS_PER_ARM:
            raise ValueError("expected 6 joint limit pairs")
        if any(lo >= hi for lo, hi in self.joint_limits):
            raise ValueError("each joint limit must satisfy lo < hi")

    @property
    def reach(self) -> float:
        """Maximum fingertip distance from the base.

        Links 1-5 separate consecutive joint origins; the sixth link is the
        wrist-roll segment along the tool axis and does not displace the
        planar keypoints, so it does not contribute to reach.
        """
        return float(sum(self.link_lengths[:5]) + self.gripper_link)

    @property
    def chain_reach(self) -> float:
        """Maximum joint-6 (wrist) distance from the base."""
        return float(sum(self.link_lengths[:5]))

    @property
    def min_chain_reach(self) -> float:
        """Wrist distance from the base at maximum same-direction curl."""
        bend = 0.0
        total = 0.0 + 0.0j
        for k in range(5):
            if k > 0:
                bend += max(abs(self.joint_limits[k][0]), abs(self.joint_limits[k][1]))
            total += self.link_lengths[k] * np.exp(1j * bend)
        return float(abs(total))

    def grip_angle(self, aperture: float) -> float:
        """World-frame direction of the fingertip offset from joint 6."""
        return self.base_orientation + self.grip_base + self.grip_swing * (aperture - 0.5)


@dataclass(frozen=True)
class RobotModel:
    """Bimanual robot: two chains plus per-dimension command rate limits."""

    left: KinematicChain
    right: KinematicChain
    gripper_range: tuple[float, float] = (0.0, 1.0)
    rate_limits: tuple[float, ...] = (6.0,) * 6 + (2.0,) + (6.0,) * 6 + (2.0,)

    def __post_init__(self):
        if len(self.rate_limits) != COMMAND_DIM:
            raise ValueError(f"expected {COMMAND_DIM} rate limits")
        if any(r <= 0 for r in self.rate_limits):
            raise ValueError("rate limits must be positive")
        lo, hi = self.gripper_range
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError("gripper range must be a sub-interval of [0, 1]")

    def chain(self, arm: str) -> KinematicChain:
        if arm == "left":
            return self.left
        if arm == "right":
            return self.right
        raise ValueError(f"unknown arm {arm!r}")

    def arm_slices(self, arm: str) -> tuple[slice, int]:
        """(joint slice, aperture index) into the 14-dim command vector."""
        if arm == "left":
            return LEFT_SLICE, LEFT_APERTURE
        if arm == "right":
            return RIGHT_SLICE, RIGHT_APERTURE
        raise ValueError(f"unknown arm {arm!r}")

    def limits_lo(self) -> np.ndarray:
        lo = np.empty(COMMAND_DIM)
        lo[LEFT_SLICE] = [l for l, _ in self.left.joint_limits]
        lo[RIGHT_SLICE] = [l for l, _ in self.right.joint_limits]
        lo[LEFT_APERTURE] = lo[RIGHT_APERTURE] = self.gripper_range[0]
        return lo

    def limits_hi(self) -> np.ndarray:
        hi = np.empty(COMMAND_DIM)
        hi[LEFT_SLICE] = [h for _, h in self.left.joint_limits]
        hi[RIGHT_SLICE] = [h for _, h in self.right.joint_limits]
        hi[LEFT_APERTURE] = hi[RIGHT_APERTURE] = self.gripper_range[1]
        return hi

    def clamp(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.limits_lo(), self.limits_hi())


@dataclass(frozen=True)
class JointState:
    """Full 14-dim command/state vector plus a timestamp."""

    values: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (COMMAND_DIM,):
            raise ValueError(f"expected {COMMAND_DIM} values")
        object.__setattr__(self, "values", v)

    def joints(self, arm: str) -> np.ndarray:
        return self.values[LEFT_SLICE if arm == "left" else RIGHT_SLICE]

    def aperture(self, arm: str) -> float:
        return float(self.values[LEFT_APERTURE if arm == "left" else RIGHT_APERTURE])


@dataclass(frozen=True)
class CameraModel:
    """Affine planar camera: pixels = scale * metres + offset."""

    scale: float
    offset: tuple[float, float]
    image_size: tuple[int, int]
    flip_x: bool = False

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.image_size[0] <= 0 or self.image_size[1] <= 0:
            raise ValueError("image size must be positive")


@dataclass(frozen=True)
class KeypointFrame:
    """14 projected keypoints; invisible points carry no valid coordinates."""

    points: tuple[tuple[float, float, bool], ...]

    def __post_init__(self):
        if len(self.points) != KEYPOINT_COUNT:
            raise ValueError(f"expected {KEYPOINT_COUNT} keypoints")

    def uv(self) -> np.ndarray:
        """(14, 2) pixel coordinates; NaN where invisible."""
        out = np.full((KEYPOINT_COUNT, 2), np.nan)
        for i, (u, v, vis) in enumerate(self.points):
            if vis:
                out[i] = (u, v)
        return out

    def visible(self) -> np.ndarray:
        return np.array([vis for _, _, vis in self.points], dtype=bool)


def default_robot() -> RobotModel:
    """Canonical desk-scale bimanual model: UR3-like proportions.

    Six 0.15 m links and a 0.04 m gripper link, bases 0.6 m apart facing
    inward. The shoulder sweeps the full +-pi and the elbow +-1.6; the
    remaining in-plane joints make progressively finer adjustments (+-0.35
    down to +-0.12) as on a desk manipulator working a tabletop; the wrist
    roll spans +-2pi and is the wide-motion-range joint.
    """
    limits = (
        (-np.pi, np.pi),
        (-1.6, 1.6),
        (-0.35, 0.35),
        (-0.15, 0.15),
        (-0.12, 0.12),
        (-2 * np.pi, 2 * np.pi),
    )
    left = KinematicChain(
        link_lengths=(0.15,) * 6,
        joint_limits=limits,
        gripper_link=0.04,
        base_position=(-0.3, 0.0),
        base_orientation=0.0,
    )
    right = replace(left, base_position=(0.3, 0.0), base_orientation=np.pi)
    return RobotModel(left=left, right=right)


def default_camera() -> CameraModel:
    """Third-person view that keeps the whole workspace inside the image."""
    return CameraModel(scale=200.0, offset=(320.0, 240.0), image_size=(640, 480))


def egocentric_camera() -> CameraModel:
    """Mirrored view, as from a head-mounted camera facing the desk."""
    return CameraModel(scale=200.0, offset=(320.0, 240.0), image_size=(640, 480), flip_x=True)


def neutral_state(model: RobotModel, aperture: float = 0.5) -> JointState:
    """All joints at zero, both grippers at the given aperture."""
    values = np.zeros(COMMAND_DIM)
    values[LEFT_APERTURE] = values[RIGHT_APERTURE] = aperture
    return JointState(values=model.clamp(values))


def check_limits(model: RobotModel, values: np.ndarray, atol: float = 1e-9) -> None:
    lo, hi = model.limits_lo(), model.limits_hi()
    v = np.asarray(values, dtype=float)
    if np.any(v < lo - atol) or np.any(v > hi + atol):
        bad = np.where((v < lo - atol) | (v > hi + atol))[0]
        raise LimitViolation(f"command dimensions {bad.tolist()} outside limits")


def chain_points(chain: KinematicChain, joints: np.ndarray, aperture: float = 0.5) -> np.ndarray:
    """(7, 2) world points for one arm: six joint origins plus fingertip.

    Joint origins accumulate rotations of joints 1-5 along links 1-5. The
    wrist roll (joint 6) spins about the tool axis and moves nothing in the
    plane; the self-leveling fingertip extends gripper_link from joint 6 at
    the world-fixed, aperture-dependent grip angle.
    """
    joints = np.asarray(joints, dtype=float)
    pts = np.empty((7, 2))
    pts[0] = chain.base_position
    theta = chain.base_orientation
    for k in range(5):
        theta += joints[k]
        pts[k + 1] = pts[k] + chain.link_lengths[k] * np.array([np.cos(theta), np.sin(theta)])
    tip_angle = chain.grip_angle(aperture)
    pts[6] = pts[5] + chain.gripper_link * np.array([np.cos(tip_angle), np.sin(tip_angle)])
    return pts


def forward_kinematics(model: RobotModel, state: JointState) -> np.ndarray:
    """(14, 2) world points in keypoint order for the full robot.

    Raises LimitViolation if any command dimension is outside its limits.
    """
    check_limits(model, state.values)
    left = chain_points(model.left, state.joints("left"), state.aperture("left"))
    right = chain_points(model.right, state.joints("right"), state.aperture("right"))
    return np.vstack([left, right])


def chain_tip(chain: KinematicChain, joints: np.ndarray, aperture: float = 0.5) -> np.ndarray:
    """World position of one arm's fingertip."""
    return chain_points(chain, joints, aperture)[6]


def project(camera: CameraModel, world_points: np.ndarray) -> KeypointFrame:
    """Project world points to pixels; points outside the image are invisible."""
    pts = np.asarray(world_points, dtype=float)
    if pts.shape != (KEYPOINT_COUNT, 2):
        raise ValueError(f"expected ({KEYPOINT_COUNT}, 2) world points")
    sign = -1.0 if camera.flip_x else 1.0
    u = sign * camera.scale * pts[:, 0] + camera.offset[0]
    v = camera.scale * pts[:, 1] + camera.offset[1]
    w, h = camera.image_size
    vis = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    return KeypointFrame(points=tuple(
        (float(u[i]), float(v[i]), bool(vis[i])) for i in range(KEYPOINT_COUNT)
    ))


def unproject(camera: CameraModel, pixel: tuple[float, float]) -> np.ndarray:
    """Invert the affine projection for a single pixel coordinate."""
    sign = -1.0 if camera.flip_x else 1.0
    x = sign * (pixel[0] - camera.offset[0]) / camera.scale
    y = (pixel[1] - camera.offset[1]) / camera.scale
    return np.array([x, y])


def step(model: RobotModel, current: JointState, command: JointState, dt: float) -> JointState:
    """First-order command tracking: move toward the command, rate-limited.

    Per-dimension change is clamped to rate_limit*dt and the result to the
    joint/aperture limits; the timestamp advances by dt.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    delta = command.values - current.values
    max_step = np.asarray(model.rate_limits) * dt
    moved = current.values + np.clip(delta, -max_step, max_step)
    return JointState(values=model.clamp(moved), timestamp=current.timestamp + dt)


# ---------------------------------------------------------------------------
# JSON configuration (robot.json / camera.json)
# ---------------------------------------------------------------------------

def _chain_to_dict(chain: KinematicChain) -> dict:
    return {
        "link_lengths": list(chain.link_lengths),
        "joint_limits": [list(p) for p in chain.joint_limits],
        "gripper_link": chain.gripper_link,
        "base_position": list(chain.base_position),
        "base_orientation": chain.base_orientation,
        "grip_base": chain.grip_base,
        "grip_swing": chain.grip_swing,
    }


def _chain_from_dict(d: dict) -> KinematicChain:
    return KinematicChain(
        link_lengths=tuple(float(x) for x in d["link_lengths"]),
        joint_limits=tuple((float(lo), float(hi)) for lo, hi in d["joint_limits"]),
        gripper_link=float(d["gripper_link"]),
        base_position=(float(d["base_position"][0]), float(d["base_position"][1])),
        base_orientation=float(d["base_orientation"]),
        grip_base=float(d.get("grip_base", np.pi / 4)),
        grip_swing=float(d.get("grip_swing", np.pi / 2)),
    )


def camera_to_dict(camera: CameraModel) -> dict:
    return {
        "scale": camera.scale,
        "offset": list(camera.offset),
        "image_size": list(camera.image_size),
        "flip_x": camera.flip_x,
    }


def camera_from_dict(d: dict) -> CameraModel:
    return CameraModel(
        scale=float(d["scale"]),
        offset=(float(d["offset"][0]), float(d["offset"][1])),
        image_size=(int(d["image_size"][0]), int(d["image_size"][1])),
        flip_x=bool(d.get("flip_x", False)),
    )


def robot_to_dict(model: RobotModel, camera: CameraModel | None = None) -> dict:
    d = {
        "left": _chain_to_dict(model.left),
        "right": _chain_to_dict(model.right),
        "gripper_range": list(model.gripper_range),
        "rate_limits": list(model.rate_limits),
    }
    if camera is not None:
        d["camera"] = camera_to_dict(camera)
    return d


def robot_from_dict(d: dict) -> RobotModel:
    return RobotModel(
        left=_chain_from_dict(d["left"]),
        right=_chain_from_dict(d["right"]),
        gripper_range=tuple(float(x) for x in d.get("gripper_range", (0.0, 1.0))),
        rate_limits=tuple(float(x) for x in d.get("rate_limits", RobotModel.rate_limits)),
    )


def load_robot(path) -> RobotModel:
    """Load a RobotModel from a robot.json file."""
    try:
        with open(path) as fh:
            d = json.load(fh)
        return robot_from_dict(d)
    except FileNotFoundError as exc:
        raise ConfigError(f"robot config not found: {path}") from exc
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"invalid robot config {path}: {exc}") from exc


def load_camera(path) -> CameraModel:
    """Load a CameraModel from a camera.json file or the camera key of robot.json."""
    try:
        with open(path) as fh:
            d = json.load(fh)
        return camera_from_dict(d.get("camera", d))
    except FileNotFoundError as exc:
        raise ConfigError(f"camera config not found: {path}") from exc
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"invalid camera config {path}: {exc}") from exc


def save_robot(path, model: RobotModel, camera: CameraModel | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(robot_to_dict(model, camera), fh, indent=2, sort_keys=True)
        fh.write("\n")
