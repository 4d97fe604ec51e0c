"""Perceive -> Plan -> Reason -> Act episode state machine.

One attempt covers a full describe/generate/decode/execute/evaluate cycle
for the current subtask; ContinueNext advances within the same attempt,
while RetryCurrent and Replan each consume a fresh attempt up to the
configured budget. The desk simulator applies grasp/release/push rules as
commands stream through it, so verdicts can be judged from scene ground
truth. All timing in traces is modeled (generation latency plus rollout
duration), which keeps trace files byte-identical across runs.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import reasoner as reasoner_mod
from .adapter import OracleDecoder, load_adapter
from .errors import PhysAgentError, UnknownTask
from .kinematics import (
    CameraModel,
    JointState,
    RobotModel,
    chain_tip,
    default_camera,
    default_robot,
    load_camera,
    load_robot,
    neutral_state,
    step,
)
from .reasoner import (
    CONTACT_RADIUS,
    GRASP_APERTURE,
    GRASP_RADIUS,
    RELEASE_APERTURE,
    OracleConfig,
    OracleReasoner,
    Verdict,
    VerdictKind,
)
from .world import (
    DEFAULT_DURATION_S,
    DEFAULT_FPS,
    FailureConfig,
    Observation,
    RolloutRequest,
    SceneObject,
    SceneState,
    SyntheticGenerator,
    observe,
    point_in_reach,
)

BOUNDARY_DROP_ZONE = 0.10
DROP_SKITTER = 0.12
DEFAULT_GENERATION_LATENCY_S = 30.0

TASKS = (
    "Fold the tissue",
    "Wipe the liquid",
    "Pick the ball",
    "Lift the baking tray",
    "Pick the thermos",
    "Put a pencil in a glass",
    "Pick two balls",
    "Pick the toy",
    "Push the cube",
    "Pick the cube",
)

# Objects that are containers or spills cannot be grasped.
_NON_GRASPABLE = {"glass", "liquid"}


class TerminalReason(str, Enum):
    SUCCESS = "Success"
    IRRECOVERABLE = "Irrecoverable"
    ATTEMPT_BUDGET = "AttemptBudget"


@dataclass(frozen=True)
class EpisodeConfig:
    task: str
    max_attempts: int = 10
    duration: float = DEFAULT_DURATION_S
    fps: float = DEFAULT_FPS
    failure: FailureConfig = FailureConfig()
    oracle: OracleConfig = OracleConfig()
    seed: int = 0
    generation_latency: float = DEFAULT_GENERATION_LATENCY_S

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class AttemptRecord:
    attempt_index: int
    subtask_id: str
    rollout_seed: int
    verdict: Verdict
    wall_time: float


@dataclass(frozen=True)
class EpisodeResult:
    task: str
    seed: int
    success: bool
    attempts_used: int
    first_attempt_success: bool
    records: tuple[AttemptRecord, ...]
    terminal_reason: TerminalReason


class DeskSimulator:
    """Kinematic robot plus object scene with grasp/release/push rules."""

    def __init__(self, model: RobotModel, camera: CameraModel, scene: SceneState,
                 state: JointState | None = None):
        self.model = model
        self.camera = camera
        self.scene = scene
        self.state = state if state is not None else neutral_state(model)
        self.time = 0.0

    def observe(self) -> Observation:
        return observe(self.model, self.camera, self.state, self.scene, self.time)

    def step_command(self, command: JointState, dt: float) -> JointState:
        prev = self.state
        new_state = step(self.model, prev, command, dt)
        for arm in ("left", "right"):
            chain = self.model.chain(arm)
            aperture = new_state.aperture(arm)
            tip = chain_tip(chain, new_state.joints(arm), aperture)
            self._apply_arm_rules(arm, tip, prev.aperture(arm), aperture)
        self.state = new_state
        self.time += dt
        return new_state

    def _apply_arm_rules(self, arm, tip, prev_aperture, aperture):
        held = self.scene.held_by(arm)
        just_grasped = None

        if held is not None:
            held = SceneObject(id=held.id, position=(float(tip[0]), float(tip[1])),
                               graspable=held.graspable, grasped_by=arm,
                               in_reach=held.in_reach)
            self.scene = self.scene.with_object(held)
            # Release on the upward aperture crossing; near the reach boundary
            # the dropped object skitters outward and may leave the workspace.
            if prev_aperture < RELEASE_APERTURE <= aperture:
                land = tip
                chain = self.model.chain(arm)
                base = np.asarray(chain.base_position)
                if np.linalg.norm(tip - base) > chain.reach - BOUNDARY_DROP_ZONE:
                    outward = (tip - base) / max(np.linalg.norm(tip - base), 1e-9)
                    land = tip + DROP_SKITTER * outward
                self.scene = self.scene.with_object(SceneObject(
                    id=held.id, position=(float(land[0]), float(land[1])),
                    graspable=held.graspable, grasped_by=None,
                    in_reach=point_in_reach(self.model, land)))
                held = None
        elif prev_aperture >= GRASP_APERTURE > aperture:
            # Downward crossing near a free graspable object closes on it.
            best, best_d = None, GRASP_RADIUS
            for obj in sorted(self.scene.objects, key=lambda o: o.id):
                if not obj.graspable or obj.grasped_by is not None:
                    continue
                d = float(np.linalg.norm(obj.pos() - tip))
                if d <= best_d:
                    best, best_d = obj, d
            if best is not None:
                just_grasped = best.id
                self.scene = self.scene.with_object(SceneObject(
                    id=best.id, position=(float(tip[0]), float(tip[1])),
                    graspable=best.graspable, grasped_by=arm, in_reach=best.in_reach))

        if aperture < GRASP_APERTURE:
            # A closed tip shoves whatever free object it contacts to its rim.
            for obj in self.scene.objects:
                if obj.grasped_by is not None or obj.id == just_grasped:
                    continue
                offset = obj.pos() - tip
                d = float(np.linalg.norm(offset))
                if d < CONTACT_RADIUS:
                    direction = offset / d if d > 1e-9 else np.array([1.0, 0.0])
                    land = tip + CONTACT_RADIUS * direction
                    self.scene = self.scene.with_object(SceneObject(
                        id=obj.id, position=(float(land[0]), float(land[1])),
                        graspable=obj.graspable, grasped_by=None,
                        in_reach=point_in_reach(self.model, land)))


def execute_rollout(sim: DeskSimulator, commands: list[JointState],
                    dt: float) -> tuple[list[JointState], Observation]:
    """Stream a command sequence through the simulator; return the trajectory
    actually followed and the final observation."""
    if not commands:
        raise ValueError("command sequence must be nonempty")
    trajectory = [sim.step_command(cmd, dt) for cmd in commands]
    return trajectory, sim.observe()


def run_episode(config: EpisodeConfig, sim: DeskSimulator, world: SyntheticGenerator,
                reasoner: OracleReasoner, adapter, rng: np.random.Generator | None = None
                ) -> EpisodeResult:
    """Run one closed-loop episode to termination.

    Component failures (unreachable goals, decode errors) never propagate;
    they consume an attempt as retry verdicts. Unknown tasks terminate
    immediately as irrecoverable failures with zero attempts used.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    records: list[AttemptRecord] = []
    attempt = 1
    wall_per_cycle = config.generation_latency + config.duration

    try:
        plan = reasoner.decompose(config.task, sim.observe(), attempt)
    except UnknownTask:
        return EpisodeResult(
            task=config.task, seed=config.seed, success=False, attempts_used=0,
            first_attempt_success=False, records=(),
            terminal_reason=TerminalReason.IRRECOVERABLE)

    cursor = 0
    while True:
        subtask = plan.subtasks[cursor]
        before = sim.observe()
        is_last = cursor == len(plan.subtasks) - 1
        try:
            prompt = reasoner.describe(subtask, before)
            goal = reasoner.goal(subtask, before)
            request = RolloutRequest(initial=before, prompt=prompt,
                                     duration=config.duration, fps=config.fps)
            rollout = world.generate(request, goal, rng)
            commands = adapter.predict_commands(rollout)
            _, after = execute_rollout(sim, commands, dt=1.0 / config.fps)
            verdict = reasoner.evaluate(subtask, before, after, attempt, rng, is_last)
            rollout_seed = rollout.seed
        except PhysAgentError as exc:
            verdict = Verdict(VerdictKind.RETRY_CURRENT, f"component failure: {exc}")
            rollout_seed = -1

        records.append(AttemptRecord(
            attempt_index=attempt, subtask_id=subtask.id, rollout_seed=rollout_seed,
            verdict=verdict, wall_time=wall_per_cycle))

        if verdict.kind is VerdictKind.TASK_COMPLETE:
            reason, success = TerminalReason.SUCCESS, True
            break
        if verdict.kind is VerdictKind.IRRECOVERABLE:
            reason, success = TerminalReason.IRRECOVERABLE, False
            break
        if verdict.kind is VerdictKind.CONTINUE_NEXT:
            cursor += 1
            if cursor >= len(plan.subtasks):
                # An oracle flip can judge the last subtask early-complete.
                reason, success = TerminalReason.SUCCESS, True
                break
            continue
        # RetryCurrent or Replan: one more attempt, budget permitting.
        attempt += 1
        if attempt > config.max_attempts:
            reason, success = TerminalReason.ATTEMPT_BUDGET, False
            break
        if verdict.kind is VerdictKind.REPLAN:
            plan = reasoner.decompose(config.task, sim.observe(), attempt)
            cursor = 0

    attempts_used = len({r.attempt_index for r in records})
    return EpisodeResult(
        task=config.task, seed=config.seed, success=success,
        attempts_used=attempts_used,
        first_attempt_success=success and attempts_used == 1,
        records=tuple(records), terminal_reason=reason)


# ---------------------------------------------------------------------------
# Task scenes
# ---------------------------------------------------------------------------

def _task_objects(task: str) -> list[str]:
    skills = reasoner_mod.default_skills()
    template = skills[task.strip().lower()]
    objects = []
    for _, ref in template:
        if ref not in objects:
            objects.append(ref)
    if len(objects) < 2:
        objects.append("distractor")
    return objects


# Band of base distances where every skill goal (approach offsets, lift
# height, gripper offset at any aperture) stays IK-feasible for that arm.
SCENE_BAND = (0.59, 0.65)
SCENE_SEPARATION = 0.12


def _workable_arm(model: RobotModel, pos: np.ndarray) -> str | None:
    best, best_d = None, np.inf
    for arm in ("left", "right"):
        d = float(np.linalg.norm(pos - np.asarray(model.chain(arm).base_position)))
        if SCENE_BAND[0] <= d <= SCENE_BAND[1] and d < best_d:
            best, best_d = arm, d
    return best


def make_task_scene(task: str, rng: np.random.Generator,
                    model: RobotModel | None = None) -> SceneState:
    """Seeded object placement inside the arms' workable bands."""
    model = model or default_robot()
    names = _task_objects(task)
    placed: list[np.ndarray] = []
    objects = []
    for name in names:
        for _ in range(1000):
            pos = np.array([rng.uniform(-0.75, 0.75), rng.uniform(0.30, 0.72)])
            if _workable_arm(model, pos) is None:
                continue
            if all(np.linalg.norm(pos - q) >= SCENE_SEPARATION for q in placed):
                break
        else:
            raise RuntimeError(f"could not place object {name!r}")
        placed.append(pos)
        objects.append(SceneObject(
            id=name, position=(float(pos[0]), float(pos[1])),
            graspable=name not in _NON_GRASPABLE))
    return SceneState(objects=tuple(objects))


# ---------------------------------------------------------------------------
# Trace persistence (JSON lines)
# ---------------------------------------------------------------------------

def _dump_line(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def write_trace(path, result: EpisodeResult) -> None:
    with open(path, "w") as fh:
        for r in result.records:
            fh.write(_dump_line({
                "type": "attempt",
                "attempt": r.attempt_index,
                "subtask": r.subtask_id,
                "rollout_seed": r.rollout_seed,
                "verdict": r.verdict.kind.value,
                "rationale": r.verdict.rationale,
                "wall_time": r.wall_time,
            }))
        fh.write(_dump_line({
            "type": "summary",
            "task": result.task,
            "seed": result.seed,
            "success": result.success,
            "attempts_used": result.attempts_used,
            "first_attempt_success": result.first_attempt_success,
            "terminal_reason": result.terminal_reason.value,
        }))


def read_trace(path) -> EpisodeResult:
    records = []
    summary = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if doc["type"] == "attempt":
                records.append(AttemptRecord(
                    attempt_index=doc["attempt"], subtask_id=doc["subtask"],
                    rollout_seed=doc["rollout_seed"],
                    verdict=Verdict(VerdictKind(doc["verdict"]), doc["rationale"]),
                    wall_time=doc["wall_time"]))
            elif doc["type"] == "summary":
                summary = doc
    if summary is None:
        raise ValueError(f"trace {path} has no summary record")
    return EpisodeResult(
        task=summary["task"], seed=summary["seed"], success=summary["success"],
        attempts_used=summary["attempts_used"],
        first_attempt_success=summary["first_attempt_success"],
        records=tuple(records),
        terminal_reason=TerminalReason(summary["terminal_reason"]))


# ---------------------------------------------------------------------------
# Suite execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteConfig:
    tasks: tuple[str, ...] = TASKS
    seeds: tuple[int, ...] = (0,)
    robot_path: str | None = None
    camera_path: str | None = None
    adapter_path: str | None = None  # None -> oracle decoder
    failure: FailureConfig = FailureConfig()
    oracle: OracleConfig = OracleConfig()
    max_attempts: int = 10
    duration: float = DEFAULT_DURATION_S
    fps: float = DEFAULT_FPS
    generation_latency: float = DEFAULT_GENERATION_LATENCY_S

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("task list must be nonempty")


def suite_from_dict(d: dict) -> SuiteConfig:
    failure = FailureConfig(
        p_recoverable=float(d.get("p_recoverable", 0.0)),
        p_irrecoverable=float(d.get("p_irrecoverable", 0.0)))
    oracle = OracleConfig(
        false_negative_rate=float(d.get("false_negative_rate", 0.0)),
        false_positive_rate=float(d.get("false_positive_rate", 0.0)))
    return SuiteConfig(
        tasks=tuple(d.get("tasks", TASKS)),
        seeds=tuple(int(s) for s in d.get("seeds", [0])),
        robot_path=d.get("robot"),
        camera_path=d.get("camera"),
        adapter_path=d.get("adapter"),
        failure=failure,
        oracle=oracle,
        max_attempts=int(d.get("max_attempts", 10)),
        duration=float(d.get("duration", DEFAULT_DURATION_S)),
        fps=float(d.get("fps", DEFAULT_FPS)),
        generation_latency=float(d.get("generation_latency",
                                       DEFAULT_GENERATION_LATENCY_S)))


def slugify(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def _run_suite_episode(suite: SuiteConfig, model, camera, adapter,
                       task: str, task_index: int, seed: int) -> EpisodeResult:
    ss = np.random.SeedSequence([seed, task_index])
    rng = np.random.default_rng(ss)
    scene = make_task_scene(task, rng, model)
    sim = DeskSimulator(model, camera, scene)
    world = SyntheticGenerator(model, camera, suite.failure)
    brain = OracleReasoner(model, suite.oracle)
    config = EpisodeConfig(
        task=task, max_attempts=suite.max_attempts, duration=suite.duration,
        fps=suite.fps, failure=suite.failure, oracle=suite.oracle, seed=seed,
        generation_latency=suite.generation_latency)
    return run_episode(config, sim, world, brain, adapter, rng)


def run_suite(suite: SuiteConfig, out_dir=None, workers: int = 1) -> list[EpisodeResult]:
    """Execute every (task, seed) episode; optionally write one trace per episode.

    Episodes draw from independent per-(task, seed) RNG streams, so parallel
    workers produce byte-identical traces to a sequential run.
    """
    model = load_robot(suite.robot_path) if suite.robot_path else default_robot()
    if suite.camera_path:
        camera = load_camera(suite.camera_path)
    else:
        camera = default_camera()
    adapter = load_adapter(suite.adapter_path) if suite.adapter_path else OracleDecoder()

    jobs = [(task, ti, seed) for ti, task in enumerate(suite.tasks)
            for seed in suite.seeds]

    def run_one(job):
        task, ti, seed = job
        return _run_suite_episode(suite, model, camera, adapter, task, ti, seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, jobs))
    else:
        results = [run_one(job) for job in jobs]

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for result in results:
            write_trace(out / f"{slugify(result.task)}__seed{result.seed}.jsonl", result)
    return results
