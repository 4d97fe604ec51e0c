"""Grounded reasoning contracts: task decomposition, subtask prompts, verdicts.

The live vision-language model is replaced by a ground-truth oracle with
injectable judgment-error rates: decomposition looks task phrases up in a
bundled skill-template table, prompts are deterministic template fills, and
outcome evaluation checks each skill's geometric predicate against the
scene. The remote-model wire contract lives in `remote`; `parse_verdict`
defines the strict reply protocol both paths share.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources

import numpy as np

from .errors import ParseError, UnknownObject, UnknownTask
from .kinematics import RobotModel, chain_tip
from .world import (
    CLOSED_APERTURE,
    OPEN_APERTURE,
    Observation,
    SceneState,
    SubtaskGoal,
)

# Geometry shared between subtask goals, success predicates, and the
# executor's grasp/release/push rules.
GRASP_RADIUS = 0.03
GRASP_APERTURE = 0.2
RELEASE_APERTURE = 0.5
CONTACT_RADIUS = 0.03
APPROACH_RADIUS = 0.07
APPROACH_OFFSET = 0.05
LIFT_HEIGHT = 0.06
LIFT_DELTA = 0.04
PLACE_RADIUS = 0.05
PLACE_OFFSET = 0.03
PUSH_STEP = 0.06
PUSH_DISTANCE = 0.03
CORRUPTION_DISTANCE = 0.02
GRID_CELL = 0.1


class Skill(str, Enum):
    APPROACH = "Approach"
    GRASP = "Grasp"
    LIFT = "Lift"
    PLACE = "Place"
    PUSH = "Push"
    RELEASE = "Release"


class VerdictKind(str, Enum):
    TASK_COMPLETE = "TaskComplete"
    CONTINUE_NEXT = "ContinueNext"
    RETRY_CURRENT = "RetryCurrent"
    REPLAN = "Replan"
    IRRECOVERABLE = "Irrecoverable"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    rationale: str = ""


@dataclass(frozen=True)
class Subtask:
    id: str
    skill: Skill
    object_ref: str
    prompt: str


@dataclass(frozen=True)
class Plan:
    task: str
    subtasks: tuple[Subtask, ...]
    created_at_attempt: int = 1

    def __post_init__(self):
        if not self.subtasks:
            raise ValueError("a plan needs at least one subtask")
        grasp_seen = False
        for st in self.subtasks:
            if st.skill is Skill.GRASP:
                grasp_seen = True
            elif st.skill in (Skill.LIFT, Skill.PLACE) and not grasp_seen:
                raise ValueError(f"{st.skill.value} requires a preceding Grasp")


@dataclass(frozen=True)
class OracleConfig:
    false_negative_rate: float = 0.0
    false_positive_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for rate in (self.false_negative_rate, self.false_positive_rate):
            if not (0.0 <= rate <= 1.0):
                raise ValueError("error rates must lie in [0, 1]")


def load_skills(path=None) -> dict:
    """Task phrase -> skill template list, from skills.json."""
    if path is None:
        raw = resources.files("physagent.data").joinpath("skills.json").read_text()
    else:
        with open(path) as fh:
            raw = fh.read()
    table = json.loads(raw)
    return {
        phrase.lower(): tuple((Skill(e["skill"]), e["object"]) for e in entries)
        for phrase, entries in table.items()
    }


_DEFAULT_SKILLS: dict | None = None


def default_skills() -> dict:
    global _DEFAULT_SKILLS
    if _DEFAULT_SKILLS is None:
        _DEFAULT_SKILLS = load_skills()
    return _DEFAULT_SKILLS


def decompose(instruction: str, obs: Observation, skills: dict | None = None,
              attempt: int = 1) -> Plan:
    """Map a known task phrase to its skill template, grounded in the scene."""
    if not instruction.strip():
        raise UnknownTask("empty instruction")
    skills = skills if skills is not None else default_skills()
    phrase = instruction.strip().lower()
    if phrase not in skills:
        raise UnknownTask(f"no template for task {instruction!r}")
    subtasks = []
    for i, (skill, object_ref) in enumerate(skills[phrase]):
        if not obs.scene.has(object_ref):
            raise UnknownObject(f"task {instruction!r} needs object {object_ref!r}")
        subtasks.append(Subtask(
            id=f"{phrase.replace(' ', '-')}-{i}",
            skill=skill,
            object_ref=object_ref,
            prompt=f"{skill.value.lower()} object '{object_ref}'",
        ))
    return Plan(task=instruction, subtasks=tuple(subtasks), created_at_attempt=attempt)


def assign_arm(model: RobotModel, skill: Skill, obj_position: np.ndarray,
               scene: SceneState, object_ref: str) -> str:
    """Deterministic arm choice.

    Whoever already holds the relevant object keeps it; placing/releasing
    prefers an arm that holds something; approaching/grasping prefers a free
    arm. Among candidates, arms whose workable annulus contains the object
    win; ties go to the base nearest the object.
    """
    from .world import point_in_annulus

    obj = scene.get(object_ref)
    if obj.grasped_by is not None:
        return obj.grasped_by
    holders = [a for a in ("left", "right") if scene.held_by(a) is not None]
    free = [a for a in ("left", "right") if scene.held_by(a) is None]
    if skill in (Skill.PLACE, Skill.RELEASE, Skill.PUSH) and holders:
        candidates = holders
    elif free:
        candidates = free
    else:
        candidates = ["left", "right"]
    workable = [a for a in candidates
                if point_in_annulus(model.chain(a), obj_position, margin=0.01)]
    if workable:
        candidates = workable
    return min(candidates, key=lambda a: float(
        np.linalg.norm(obj_position - np.asarray(model.chain(a).base_position))))


def grid_cell(position, cell: float = GRID_CELL) -> tuple[int, int]:
    p = np.asarray(position, dtype=float)
    return (int(math.floor(p[0] / cell + 1e-9)), int(math.floor(p[1] / cell + 1e-9)))


def describe_subtask(subtask: Subtask, obs: Observation, model: RobotModel) -> str:
    """Deterministic constraint-aware prompt for the action generator."""
    obj = obs.scene.get(subtask.object_ref)
    arm = assign_arm(model, subtask.skill, obj.pos(), obs.scene, subtask.object_ref)
    cx, cy = grid_cell(obj.pos())
    return (f"{subtask.skill.value.lower()} object '{subtask.object_ref}' "
            f"at cell ({cx},{cy}) with {arm} arm")


def subtask_goal(subtask: Subtask, obs: Observation, model: RobotModel) -> SubtaskGoal:
    """Geometric goal the synthetic generator plans toward."""
    obj = obs.scene.get(subtask.object_ref)
    pos = obj.pos()
    arm = assign_arm(model, subtask.skill, pos, obs.scene, subtask.object_ref)
    base = np.asarray(model.chain(arm).base_position)
    current_ap = obs.joint_state.aperture(arm)

    if subtask.skill is Skill.APPROACH:
        # Come alongside: a tangential offset keeps the staging point at the
        # same radius from the base, so it stays inside the workable annulus.
        radial = pos - base
        norm = np.linalg.norm(radial)
        radial = radial / norm if norm > 1e-9 else np.array([1.0, 0.0])
        tangent = np.array([-radial[1], radial[0]])
        target = pos + APPROACH_OFFSET * tangent
        aperture = OPEN_APERTURE
    elif subtask.skill is Skill.GRASP:
        target = pos
        aperture = CLOSED_APERTURE
    elif subtask.skill is Skill.LIFT:
        target = pos + np.array([0.0, LIFT_HEIGHT])
        aperture = CLOSED_APERTURE
    elif subtask.skill is Skill.PLACE:
        target = pos + np.array([0.0, PLACE_OFFSET])
        aperture = OPEN_APERTURE
    elif subtask.skill is Skill.PUSH:
        # Follow through along the line of motion so the closed tip passes
        # straight through the object from wherever it currently stands.
        tip = _tip_position(model, obs, arm)
        through = pos - tip
        norm = np.linalg.norm(through)
        direction = through / norm if norm > 1e-9 else np.array([1.0, 0.0])
        target = pos + PUSH_STEP * direction
        # Keep the follow-through target comfortably inside reach.
        chain = model.chain(arm)
        dist = np.linalg.norm(target - base)
        if dist > chain.reach - 0.06:
            target = base + (target - base) * ((chain.reach - 0.06) / dist)
        aperture = CLOSED_APERTURE
    else:  # Release: stay put, open the gripper
        held = obs.scene.held_by(arm)
        target = held.pos() if held is not None else pos
        aperture = OPEN_APERTURE

    return SubtaskGoal(arm=arm, target=(float(target[0]), float(target[1])),
                       final_aperture=aperture, object_id=subtask.object_ref,
                       skill=subtask.skill.value)


def _tip_position(model: RobotModel, obs: Observation, arm: str) -> np.ndarray:
    return chain_tip(model.chain(arm), obs.joint_state.joints(arm),
                     obs.joint_state.aperture(arm))


def subtask_predicate(subtask: Subtask, before: Observation, after: Observation,
                      model: RobotModel) -> bool:
    """Ground-truth geometric success check for one executed subtask."""
    obj_before = before.scene.get(subtask.object_ref)
    obj_after = after.scene.get(subtask.object_ref)
    arm = assign_arm(model, subtask.skill, obj_before.pos(), before.scene,
                     subtask.object_ref)
    tip = _tip_position(model, after, arm)
    aperture = after.joint_state.aperture(arm)

    if subtask.skill is Skill.APPROACH:
        return float(np.linalg.norm(tip - obj_after.pos())) <= APPROACH_RADIUS
    if subtask.skill is Skill.GRASP:
        return (float(np.linalg.norm(tip - obj_after.pos())) <= GRASP_RADIUS
                and aperture < GRASP_APERTURE)
    if subtask.skill is Skill.LIFT:
        dy = float(obj_after.pos()[1] - obj_before.pos()[1])
        still_held = (float(np.linalg.norm(tip - obj_after.pos())) <= GRASP_RADIUS
                      and aperture < GRASP_APERTURE)
        return dy >= LIFT_DELTA and still_held
    if subtask.skill is Skill.PLACE:
        carried = before.scene.held_by(arm)
        if carried is None:
            return False
        landed = after.scene.get(carried.id)
        return (float(np.linalg.norm(landed.pos() - obj_after.pos())) <= PLACE_RADIUS
                and aperture >= RELEASE_APERTURE)
    if subtask.skill is Skill.PUSH:
        moved = float(np.linalg.norm(obj_after.pos() - obj_before.pos()))
        return moved >= PUSH_DISTANCE
    if subtask.skill is Skill.RELEASE:
        return aperture >= RELEASE_APERTURE and after.scene.held_by(arm) is None
    raise ValueError(f"unhandled skill {subtask.skill}")


def evaluate_outcome(subtask: Subtask, before: Observation, after: Observation,
                     oracle: OracleConfig, attempt: int, rng: np.random.Generator,
                     model: RobotModel, is_last: bool = False) -> Verdict:
    """Three-way outcome judgment with configurable error rates.

    Ground truth first: success advances (or completes on the last subtask),
    an out-of-reach drop is terminal, displaced bystander objects force a
    replan, and anything else is a retry. One uniform draw per call then
    flips success/failure judgments at the configured rates; the terminal
    verdict is never flipped.
    """
    arm = assign_arm(model, subtask.skill, before.scene.get(subtask.object_ref).pos(),
                     before.scene, subtask.object_ref)
    u = float(rng.random())

    watched = {subtask.object_ref}
    held = before.scene.held_by(arm)
    if held is not None:
        watched.add(held.id)
    for oid in watched:
        if not after.scene.get(oid).in_reach:
            return Verdict(VerdictKind.IRRECOVERABLE,
                           f"object '{oid}' dropped out of reach")

    success = subtask_predicate(subtask, before, after, model)
    corrupted = []
    for obj in before.scene.objects:
        if obj.id in watched:
            continue
        moved = float(np.linalg.norm(
            after.scene.get(obj.id).pos() - obj.pos()))
        if moved > CORRUPTION_DISTANCE:
            corrupted.append(obj.id)

    if success:
        if u < oracle.false_negative_rate:
            return Verdict(VerdictKind.RETRY_CURRENT,
                           f"attempt {attempt}: judged failed (oracle flip)")
        if is_last:
            return Verdict(VerdictKind.TASK_COMPLETE,
                           f"attempt {attempt}: all subtasks satisfied")
        return Verdict(VerdictKind.CONTINUE_NEXT,
                       f"attempt {attempt}: subtask '{subtask.id}' satisfied")

    if u < oracle.false_positive_rate:
        kind = VerdictKind.TASK_COMPLETE if is_last else VerdictKind.CONTINUE_NEXT
        return Verdict(kind, f"attempt {attempt}: judged success (oracle flip)")
    if corrupted:
        return Verdict(VerdictKind.REPLAN,
                       f"scene changed: {','.join(sorted(corrupted))} displaced")
    return Verdict(VerdictKind.RETRY_CURRENT,
                   f"attempt {attempt}: subtask '{subtask.id}' predicate failed")


# ---------------------------------------------------------------------------
# Verdict wire protocol
# ---------------------------------------------------------------------------

_VERDICT_TOKENS = {
    "complete": VerdictKind.TASK_COMPLETE,
    "continue": VerdictKind.CONTINUE_NEXT,
    "retry": VerdictKind.RETRY_CURRENT,
    "replan": VerdictKind.REPLAN,
    "irrecoverable": VerdictKind.IRRECOVERABLE,
}
_TOKEN_FOR_KIND = {
    VerdictKind.TASK_COMPLETE: "COMPLETE",
    VerdictKind.CONTINUE_NEXT: "CONTINUE",
    VerdictKind.RETRY_CURRENT: "RETRY",
    VerdictKind.REPLAN: "REPLAN",
    VerdictKind.IRRECOVERABLE: "IRRECOVERABLE",
}
_VERDICT_RE = re.compile(
    r"^\s*(complete|continue|retry|replan|irrecoverable)\b[:\s]*(.*)$",
    re.IGNORECASE | re.DOTALL,
)


def parse_verdict(text: str) -> Verdict:
    """Strict reply protocol: a verdict token first, the rest is rationale."""
    m = _VERDICT_RE.match(text or "")
    if m is None:
        raise ParseError(f"no verdict token at start of reply: {text!r}")
    return Verdict(kind=_VERDICT_TOKENS[m.group(1).lower()],
                   rationale=m.group(2).strip())


def render_verdict(verdict: Verdict) -> str:
    token = _TOKEN_FOR_KIND[verdict.kind]
    return f"{token}: {verdict.rationale}" if verdict.rationale else token


class OracleReasoner:
    """Ground-truth reasoner component bound to a robot model and error config."""

    def __init__(self, model: RobotModel, oracle: OracleConfig = OracleConfig(),
                 skills: dict | None = None):
        self.model = model
        self.oracle = oracle
        self.skills = skills if skills is not None else default_skills()

    def decompose(self, instruction: str, obs: Observation, attempt: int = 1) -> Plan:
        return decompose(instruction, obs, self.skills, attempt)

    def describe(self, subtask: Subtask, obs: Observation) -> str:
        return describe_subtask(subtask, obs, self.model)

    def goal(self, subtask: Subtask, obs: Observation) -> SubtaskGoal:
        return subtask_goal(subtask, obs, self.model)

    def evaluate(self, subtask: Subtask, before: Observation, after: Observation,
                 attempt: int, rng: np.random.Generator, is_last: bool) -> Verdict:
        return evaluate_outcome(subtask, before, after, self.oracle, attempt,
                                rng, self.model, is_last)
