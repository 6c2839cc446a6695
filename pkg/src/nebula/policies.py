"""Scripted reference policies behind a synchronous policy contract.

Every metric in the harness is exercisable with the policies here: an expert
that plans from privileged scene state, a seeded random baseline, constant
policies with injected service delay, a bounded-noise jitter source, and an
open-loop variant of the expert that freezes its plan at the first step.

The contract is strictly one-in-one-out: reset() latches the instruction,
then each act() consumes one observation and returns one action sized dof+1
(the trailing value is the gripper command).
"""
from __future__ import annotations

import math
import time
from dataclasses import replace

from . import taskgen
from .episode import Action, EmbodimentConfig, Observation
from .errors import ProtocolViolation
from .geom import vec_dist
from .rng import substream
from .simworld import (
    MAX_JOINT_DELTA,
    SceneState,
    scripted_lead,
    step,
    tip_position,
)

OPEN_CMD = -1.0
CLOSE_CMD = 1.0
PARK_TIP = (0.0, -0.3, 0.3)
CARRY_Z = 0.18
APPROACH_CLEARANCE = 0.08
ARRIVE_EPS = 1e-7
YAW_EPS = 0.02


class Policy:
    """Base contract. Subclasses implement _act; privileged policies may
    additionally consume SceneStates through set_scene."""

    policy_id = "policy"
    mode = "in_process_scripted"
    needs_observation = True

    def __init__(self):
        self._ready = False
        self._instruction = ""
        self._embodiment: EmbodimentConfig | None = None

    def reset(self, instruction: str, embodiment: EmbodimentConfig) -> None:
        self._ready = True
        self._instruction = instruction
        self._embodiment = embodiment
        self._on_reset()

    def _on_reset(self) -> None:
        pass

    def set_scene(self, scene: SceneState) -> None:
        pass

    def act(self, observation: Observation | None) -> Action:
        if not self._ready:
            raise ProtocolViolation("act() called before reset()")
        return self._act(observation)

    def _act(self, observation) -> Action:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def _zero_values(self) -> list[float]:
        return [0.0] * (self._embodiment.dof + 1)


class ZeroPolicy(Policy):
    policy_id = "zero"
    needs_observation = False

    def _act(self, observation) -> Action:
        return Action(values=tuple(self._zero_values()))


class RandomPolicy(Policy):
    """Uniform i.i.d. actions in [-1, 1]; reproducible per (seed, episode)."""

    policy_id = "random"
    needs_observation = False

    def __init__(self, seed: int = 0):
        super().__init__()
        self.seed = seed
        self._episode = 0
        self._rng = None

    def _on_reset(self):
        self._episode += 1
        self._rng = substream(self.seed, "policy", "random", str(self._episode))

    def _act(self, observation) -> Action:
        n = self._embodiment.dof + 1
        return Action(values=tuple(self._rng.uniform(-1.0, 1.0) for _ in range(n)))


class DelayedConstantPolicy(Policy):
    """Constant zero action after an injected service delay.

    Spins on the monotonic clock instead of sleeping: a sleep wakeup can
    arrive several milliseconds late on a loaded host, which would smear
    every sample, while a spin only pays for stalls that happen to straddle
    the deadline instant.
    """

    policy_id = "delayed-constant"
    needs_observation = False

    def __init__(self, delay_ms: float):
        super().__init__()
        self.delay_ms = delay_ms

    def _act(self, observation) -> Action:
        deadline = time.perf_counter_ns() + int(self.delay_ms * 1e6)
        while time.perf_counter_ns() < deadline:
            pass
        return Action(values=tuple(self._zero_values()))


class JitterPolicy(Policy):
    """Bounded i.i.d. noise around the zero action; amplitude 0 is constant."""

    policy_id = "jitter"
    needs_observation = False

    def __init__(self, amplitude: float, seed: int = 0):
        super().__init__()
        if amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        self.amplitude = amplitude
        self.seed = seed
        self._rng = None

    def _on_reset(self):
        self._rng = substream(self.seed, "policy", "jitter")

    def _act(self, observation) -> Action:
        a = self.amplitude
        n = self._embodiment.dof + 1
        values = tuple(max(-1.0, min(1.0, self._rng.uniform(-a, a))) for _ in range(n))
        return Action(values=values)


# ---------------------------------------------------------------------------
# Instruction grammar for the scripted expert's language mode. The grammar is
# closed over the harness's own instruction templates; anything outside it
# parses to None and the expert parks.

_CONTAINER_WORDS = ("tray", "box", "bin", "socket", "slot")
_MARKER_WORDS = ("marker", "mark")


def _find_color_target(low: str, scene: SceneState, graspable_only: bool):
    for name, rgb in taskgen.COLORS.items():
        if name.replace("_", " ") in low:
            for obj in scene.objects:
                if obj.color == rgb and (not graspable_only or obj.shape in ("cube", "sphere", "cylinder", "peg")):
                    return obj.id
    return None


def _first_of_shapes(scene: SceneState, shapes) -> int | None:
    for obj in scene.objects:
        if obj.shape in shapes:
            return obj.id
    return None


def _noun_target(low: str, scene: SceneState) -> int | None:
    by_color = _find_color_target(low, scene, graspable_only=True)
    if by_color is not None:
        return by_color
    if "ball" in low:
        return _first_of_shapes(scene, ("sphere",))
    if "peg" in low:
        return _first_of_shapes(scene, ("peg",))
    if "cylinder" in low:
        return _first_of_shapes(scene, ("cylinder",))
    if "cube" in low or "object" in low:
        return _first_of_shapes(scene, ("cube", "sphere", "cylinder", "peg"))
    return None


def parse_instruction(text: str, scene: SceneState):
    """Map an instruction to a declarative objective, or None if unparseable.

    Returns the same goal tuples taskgen.expert_goals emits, plus
    ("release",) for put-down commands.
    """
    low = text.lower()
    if "release" in low or "put down" in low:
        return ("release",)
    if "touch" in low or "press" in low:
        if any(w in low for w in _MARKER_WORDS):
            target = _first_of_shapes(scene, ("switch",))
        else:
            target = _noun_target(low, scene)
        return None if target is None else ("touch", target, None)
    height = None
    for token in low.replace(",", " ").split():
        if token.isdigit():
            height = int(token) / 100.0
            break
    if "pick up" in low or "lift" in low or "hold" in low or "grab" in low:
        target = _noun_target(low, scene)
        if target is None:
            return None
        obj = scene.object_by_id(target)
        z = height if height is not None else 0.13
        return ("hold", target, (obj.pose.position[0], obj.pose.position[1], z))
    if "put" in low or "place" in low or "move" in low or "set" in low or "insert" in low:
        target = _noun_target(low, scene)
        if target is None:
            return None
        obj = scene.object_by_id(target)
        if any(w in low for w in _CONTAINER_WORDS):
            box_id = _first_of_shapes(scene, ("container",))
            if box_id is None:
                return None
            box = scene.object_by_id(box_id)
            lead = scripted_lead(scene, box_id)
            return (
                "place",
                target,
                (box.pose.position[0] + lead[0], box.pose.position[1] + lead[1], obj.half[2]),
                None,
            )
        if any(w in low for w in _MARKER_WORDS):
            mark_id = _first_of_shapes(scene, ("switch",))
            if mark_id is None:
                return None
            mark = scene.object_by_id(mark_id)
            return ("place", target, (mark.pose.position[0], mark.pose.position[1], obj.half[2]), None)
    return None


class ScriptedExpert(Policy):
    """Plans straight tip paths from privileged SceneState each step.

    Criterion mode (set_task before reset) decomposes the task's success
    criterion into outstanding objectives and pursues the first one, so it
    replans for free when events displace objects or rewrite instructions.
    Instruction mode parses scene.active_instruction instead.
    """

    policy_id = "scripted-expert"
    needs_observation = False

    def __init__(self, use_instruction: bool = False):
        super().__init__()
        self.use_instruction = use_instruction
        self._spec = None
        self._criterion = None
        self._tracker = None
        self._scene: SceneState | None = None
        self.last_goal_count = 0

    def set_task(self, spec: taskgen.TaskSpec) -> None:
        self._spec = spec
        self._criterion = taskgen.criterion_for(spec)

    def _on_reset(self):
        self._tracker = taskgen.CriterionTracker(self._criterion) if self._criterion else None
        self._scene = None
        self._goal_prev = {}

    def set_scene(self, scene: SceneState) -> None:
        self._scene = scene

    # goal selection is a hook so variants can degrade the plan
    def _select_goal(self, goals):
        return goals[0] if goals else None

    def _act(self, observation) -> Action:
        scene = self._scene
        if scene is None:
            raise ProtocolViolation("ScriptedExpert needs set_scene before act")
        if self.use_instruction:
            goal = parse_instruction(scene.active_instruction, scene)
            if goal is not None and goal[0] == "release":
                goal = self._release_goal(scene)
            if goal is not None and goal[0] == "place":
                obj = scene.object_by_id(goal[1])
                if obj.attached_to is None and vec_dist(obj.pose.position, goal[2]) <= 0.012:
                    goal = None
            self.last_goal_count = 0 if goal is None else 1
        else:
            if self._criterion is None:
                raise ProtocolViolation("criterion-mode expert needs set_task before reset")
            self._tracker.update(scene)
            goals = taskgen.expert_goals(self._criterion, scene, self._tracker)
            self.last_goal_count = len(goals)
            goal = self._select_goal(goals)
        if goal is None:
            return self._park(scene)
        kind = goal[0]
        if kind == "place":
            return self._do_place(scene, goal[1], goal[2], goal[3], keep_holding=False)
        if kind == "hold":
            return self._do_place(scene, goal[1], goal[2], None, keep_holding=True)
        if kind == "touch":
            return self._do_touch(scene, goal[1], goal[2])
        if kind == "follow":
            return self._do_follow(scene, goal[1])
        return self._park(scene)

    def _release_goal(self, scene):
        held = scene.attached_object()
        if held is None:
            return None
        x, y, _ = held.pose.position
        return ("place", held.id, (x, y, held.half[2]), None)

    # -- motion primitives ---------------------------------------------------

    def _drive(self, scene, tip_target, yaw_target, grip_cmd) -> Action:
        dof = scene.embodiment.dof
        values = [0.0] * (dof + 1)
        q = scene.q
        for j in range(min(3, dof)):
            diff = tip_target[j] - q[j]
            values[j] = max(-1.0, min(1.0, diff / MAX_JOINT_DELTA))
        if yaw_target is not None and dof >= 6:
            diff = self._yaw_diff(yaw_target, q[5])
            values[5] = max(-1.0, min(1.0, diff / MAX_JOINT_DELTA))
        values[dof] = grip_cmd
        return Action(values=tuple(values))

    @staticmethod
    def _yaw_diff(target, current):
        # pegs and slots are 180-degree symmetric; rotate the short way mod pi
        return (target - current + math.pi / 2.0) % math.pi - math.pi / 2.0

    def _park(self, scene) -> Action:
        return self._drive(scene, PARK_TIP, None, OPEN_CMD)

    def _arrive_eps(self, key, gx: float, gy: float) -> float:
        # A goal that creeps between replans belongs to a scripted object; the
        # tip then trails it by exactly one per-step displacement, so widen the
        # arrival gate by that much.  A large jump is a replan to a new static
        # goal and keeps the exact gate.
        prev = self._goal_prev.get(key)
        self._goal_prev[key] = (gx, gy)
        if prev is None:
            return ARRIVE_EPS
        drift = math.hypot(gx - prev[0], gy - prev[1])
        if drift > 0.02:
            return ARRIVE_EPS
        return ARRIVE_EPS + 1.5 * drift

    def _do_place(self, scene, obj_id, goal, yaw_target, keep_holding) -> Action:
        obj = scene.object_by_id(obj_id)
        tip = tip_position(scene)
        held = obj.attached_to is not None
        other = scene.attached_object()
        if other is not None and other.id != obj_id:
            # wrong object in hand: let go where it is and replan next step
            return self._drive(scene, tip, None, OPEN_CMD)
        if not held:
            lead = scripted_lead(scene, obj_id)
            grasp = (
                obj.pose.position[0] + lead[0],
                obj.pose.position[1] + lead[1],
                obj.pose.position[2] + lead[2],
            )
            eps = self._arrive_eps(("grasp", obj_id), grasp[0], grasp[1])
            if math.hypot(tip[0] - grasp[0], tip[1] - grasp[1]) > eps:
                hover = max(tip[2], obj.top_z + APPROACH_CLEARANCE)
                return self._drive(scene, (grasp[0], grasp[1], hover), None, OPEN_CMD)
            if abs(tip[2] - grasp[2]) > ARRIVE_EPS:
                return self._drive(scene, grasp, None, OPEN_CMD)
            return self._drive(scene, tip, None, CLOSE_CMD)
        gx, gy, gz = goal
        eps = self._arrive_eps(("place", obj_id), gx, gy)
        if math.hypot(tip[0] - gx, tip[1] - gy) > eps:
            carry = max(tip[2], gz, CARRY_Z) if not keep_holding else max(gz, tip[2])
            return self._drive(scene, (gx, gy, carry), yaw_target, CLOSE_CMD)
        if abs(tip[2] - gz) > ARRIVE_EPS:
            return self._drive(scene, (gx, gy, gz), yaw_target, CLOSE_CMD)
        if yaw_target is not None and abs(self._yaw_diff(yaw_target, scene.q[5])) > YAW_EPS:
            return self._drive(scene, (gx, gy, gz), yaw_target, CLOSE_CMD)
        if keep_holding:
            return self._drive(scene, (gx, gy, gz), yaw_target, CLOSE_CMD)
        return self._drive(scene, (gx, gy, gz), None, OPEN_CMD)

    def _do_touch(self, scene, obj_id, window_start) -> Action:
        obj = scene.object_by_id(obj_id)
        lead = scripted_lead(scene, obj_id)
        x = obj.pose.position[0] + lead[0]
        y = obj.pose.position[1] + lead[1]
        top = obj.top_z + lead[2]
        if window_start is not None and scene.sim_step < window_start - 1:
            return self._drive(scene, (x, y, top + APPROACH_CLEARANCE), None, OPEN_CMD)
        return self._drive(scene, (x, y, top), None, OPEN_CMD)

    def _do_follow(self, scene, obj_id) -> Action:
        obj = scene.object_by_id(obj_id)
        lead = scripted_lead(scene, obj_id)
        target = (
            obj.pose.position[0] + lead[0],
            obj.pose.position[1] + lead[1],
            obj.pose.position[2] + lead[2],
        )
        return self._drive(scene, target, None, OPEN_CMD)


class ReachOnlyPolicy(ScriptedExpert):
    """Expert that approaches and touches but never closes the gripper."""

    policy_id = "reach-only"

    def _select_goal(self, goals):
        goal = super()._select_goal(goals)
        if goal is None:
            return None
        if goal[0] in ("place", "hold"):
            return ("touch", goal[1], None)
        return goal


class FrozenPolicy(Policy):
    """Open-loop negative control: simulates the expert once on the initial
    scene with the event queue stripped, then replays that action tape.

    When the tape runs out the last action repeats, so a grasp stays closed
    instead of silently relaxing to half-open.
    """

    policy_id = "frozen"
    needs_observation = False

    def __init__(self, use_instruction: bool = False, max_plan_steps: int = 400):
        super().__init__()
        self.use_instruction = use_instruction
        self.max_plan_steps = max_plan_steps
        self._inner = ScriptedExpert(use_instruction=use_instruction)
        self._initial: SceneState | None = None
        self._plan: list[Action] | None = None
        self._cursor = 0

    def set_task(self, spec: taskgen.TaskSpec) -> None:
        self._inner.set_task(spec)

    def _on_reset(self):
        self._inner.reset(self._instruction, self._embodiment)
        self._initial = None
        self._plan = None
        self._cursor = 0

    def set_scene(self, scene: SceneState) -> None:
        if self._plan is None and self._initial is None:
            self._initial = scene

    def _make_plan(self):
        sim = replace(self._initial, event_queue=())
        plan = []
        idle = 0
        for _ in range(self.max_plan_steps):
            self._inner.set_scene(sim)
            action = self._inner.act(None)
            plan.append(action)
            sim = step(sim, action)
            idle = idle + 1 if self._inner.last_goal_count == 0 else 0
            if idle >= 3:
                break
        self._plan = plan

    def _act(self, observation) -> Action:
        if self._initial is None:
            raise ProtocolViolation("FrozenPolicy needs set_scene before act")
        if self._plan is None:
            self._make_plan()
        if not self._plan:
            return Action(values=tuple(self._zero_values()))
        action = self._plan[min(self._cursor, len(self._plan) - 1)]
        self._cursor += 1
        return action
