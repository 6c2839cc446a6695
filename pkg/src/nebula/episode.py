"""Canonical, embodiment-abstracted trajectory types and their validation.

An Episode is one complete task attempt: an instruction, an embodiment
reference, a time-ordered list of Steps (multi-camera Observation + Action +
per-step success flag), and a final success bit. All types are immutable
after construction; invariant checking is done by :func:`validate_episode`,
which reports violations as data rather than raising.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import InvalidEpisode

CAMERA_IDS = ("front", "back", "left", "right", "top", "wrist")
MODALITIES = ("rgb", "depth", "segmentation")
GRIPPER_TYPES = ("parallel_jaw", "suction", "none")

# bytes per pixel: rgb = 3x u8, depth = f32 meters, segmentation = u16 object id
MODALITY_STRIDE = {"rgb": 3, "depth": 4, "segmentation": 2}


@dataclass(frozen=True)
class EmbodimentConfig:
    """Robot-hardware description decoupled from episode data."""

    robot_id: str
    dof: int
    gripper: str
    arm_count: int = 1
    joint_limits: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "joint_limits", tuple((float(a), float(b)) for a, b in self.joint_limits)
        )


@dataclass(frozen=True)
class Image:
    width: int
    height: int
    modality: str
    data: bytes

    def expected_nbytes(self) -> int:
        return self.width * self.height * MODALITY_STRIDE.get(self.modality, 0)


@dataclass(frozen=True)
class Observation:
    """One timestep of sensing: 6 cameras x 3 modalities plus proprioception.

    ``views`` maps (camera_id, modality) to an Image covering the fixed
    camera set; ``q``/``q_dot`` are joint positions (rad) and velocities
    (rad/s); ``t`` is the step index and ``wall_time`` seconds since episode
    start.
    """

    views: dict[tuple[str, str], Image]
    q: tuple[float, ...]
    q_dot: tuple[float, ...]
    t: int
    wall_time: float

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        object.__setattr__(self, "q_dot", tuple(float(v) for v in self.q_dot))


@dataclass(frozen=True)
class Action:
    """Normalized joint-delta targets plus one gripper command, all in [-1, 1].

    Length is dof + 1; the trailing component is the gripper command
    (-1 fully open, +1 fully close).
    """

    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Step:
    index: int
    observation: Observation
    action: Action
    success: int


@dataclass(frozen=True)
class TaskMeta:
    family: str
    tier: str
    template_id: int
    seed: int
    variant_tag: str = ""


@dataclass(frozen=True)
class Episode:
    episode_id: str
    instruction: str
    embodiment: EmbodimentConfig
    task_meta: TaskMeta
    steps: tuple[Step, ...]
    final_success: int

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str
    where: str = ""


def _check_embodiment(emb: EmbodimentConfig, out: list[Violation]):
    if emb.dof < 1:
        out.append(Violation("EMBODIMENT_DOF", f"dof must be >= 1, got {emb.dof}"))
    if emb.arm_count < 1:
        out.append(Violation("ARM_COUNT", f"arm_count must be >= 1, got {emb.arm_count}"))
    if emb.gripper not in GRIPPER_TYPES:
        out.append(Violation("GRIPPER_TYPE", f"unknown gripper {emb.gripper!r}"))
    if len(emb.joint_limits) != emb.dof:
        out.append(
            Violation(
                "JOINT_LIMITS",
                f"expected {emb.dof} joint limit pairs, got {len(emb.joint_limits)}",
            )
        )
    for j, (lo, hi) in enumerate(emb.joint_limits):
        if not lo < hi:
            out.append(Violation("JOINT_LIMITS", f"joint {j}: min {lo} not < max {hi}"))


def _check_observation(obs: Observation, dof: int, where: str, out: list[Violation]):
    cameras = {cam for cam, _ in obs.views}
    if cameras != set(CAMERA_IDS):
        out.append(
            Violation("VIEW_SET", f"camera ids {sorted(cameras)} != fixed six", where)
        )
    for cam in cameras:
        mods = {m for c, m in obs.views if c == cam}
        if mods != set(MODALITIES):
            out.append(Violation("VIEW_SET", f"camera {cam} modalities {sorted(mods)}", where))
    for (cam, mod), img in obs.views.items():
        if img.modality != mod:
            out.append(
                Violation("VIEW_MODALITY", f"{cam}/{mod} holds a {img.modality} image", where)
            )
        if len(img.data) != img.expected_nbytes():
            out.append(
                Violation(
                    "IMAGE_PAYLOAD",
                    f"{cam}/{mod}: {len(img.data)} bytes, expected {img.expected_nbytes()}",
                    where,
                )
            )
    if len(obs.q) != dof or len(obs.q_dot) != dof:
        out.append(
            Violation("OBS_DIM", f"|q|={len(obs.q)} |q_dot|={len(obs.q_dot)} vs dof={dof}", where)
        )
    if obs.t < 0:
        out.append(Violation("OBS_T", f"t={obs.t} negative", where))


def validate_episode(ep: Episode) -> list[Violation]:
    """Check every invariant; returns all violations (empty list = valid)."""
    out: list[Violation] = []
    if not ep.episode_id:
        out.append(Violation("EPISODE_ID", "empty episode_id"))
    _check_embodiment(ep.embodiment, out)
    dof = ep.embodiment.dof
    if not ep.steps:
        out.append(Violation("STEPS_EMPTY", "episode has no steps"))
        return out
    for pos, step in enumerate(ep.steps):
        where = f"steps[{pos}]"
        if step.index != pos:
            out.append(Violation("STEP_ORDER", f"index {step.index} at position {pos}", where))
        if step.success not in (0, 1):
            out.append(Violation("STEP_SUCCESS", f"success={step.success}", where))
        if len(step.action.values) != dof + 1:
            out.append(
                Violation("ACTION_DIM", f"{len(step.action.values)} values vs dof+1={dof + 1}", where)
            )
        for v in step.action.values:
            if not math.isfinite(v) or not -1.0 <= v <= 1.0:
                out.append(Violation("ACTION_RANGE", f"component {v!r} outside [-1, 1]", where))
                break
        _check_observation(step.observation, dof, where, out)
    if ep.final_success not in (0, 1):
        out.append(Violation("FINAL_SUCCESS", f"final_success={ep.final_success}"))
    elif ep.final_success != ep.steps[-1].success:
        out.append(
            Violation(
                "FINAL_SUCCESS",
                f"final_success={ep.final_success} != last step flag {ep.steps[-1].success}",
            )
        )
    return out


def episode_success(ep: Episode) -> int:
    """Episode-level success: the final step's flag (goal reached and held at end)."""
    violations = validate_episode(ep)
    if violations:
        raise InvalidEpisode(violations)
    return ep.final_success
