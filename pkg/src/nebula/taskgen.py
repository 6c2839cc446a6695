"""Procedural capability-task generation with single-factor probes.

The catalog is 6 families x 3 tiers x 3 templates. Every template draws its
frozen factors from one RNG substream and its probed factor from another, so
changing the probe value (or overriding it) can never perturb anything else.
The Language family goes further: all nine of its templates share one scene
per seed, keyed by (family, seed) alone, and differ only in instruction text.

Success criteria are declarative and evaluated against privileged SceneStates;
`CriterionTracker` turns a criterion into a per-step success flag with the
hold/window/sequence semantics described on each kind.
"""
from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field, replace

from .episode import EmbodimentConfig
from .errors import SpecMismatch, TooShort, UnknownTemplate
from .geom import quat_from_yaw, vec_dist, yaw_of
from .rng import substream
from .simworld import (
    Event,
    MotionScript,
    MotionSegment,
    ObjectState,
    Pose,
    SceneState,
    half_extents,
    inject_event,
    make_scene,
    scripted_lead,
    signed_distance,
    tip_position,
)

FAMILIES = (
    "Control",
    "Perception",
    "Language",
    "DynamicAdaptation",
    "SpatialReasoning",
    "Robustness",
)
TIERS = ("Easy", "Medium", "Hard")
TEMPLATE_IDS = (1, 2, 3)

POSITION_TOLERANCE = {"Easy": 0.03, "Medium": 0.015, "Hard": 0.008}
YAW_TOLERANCE = 0.2  # radians, Hard-tier orientation criteria
HOLD_STEPS = 5  # consecutive satisfied steps a placement must survive
CONTACT_RADIUS = 0.01  # tip-to-surface distance that counts as touching
MAX_STEPS = {"Easy": 400, "Medium": 400, "Hard": 800}

HOME_Q = (0.0, -0.3, 0.25, 0.0, 0.0, 0.0)

DESK_ARM = EmbodimentConfig(
    robot_id="desk-arm-6dof",
    dof=6,
    gripper="parallel_jaw",
    arm_count=1,
    joint_limits=(
        (-0.6, 0.6),
        (-0.6, 0.6),
        (0.0, 0.9),
        (-3.2, 3.2),
        (-3.2, 3.2),
        (-3.2, 3.2),
    ),
)

COLORS = {
    "red": (200, 30, 30),
    "green": (30, 170, 40),
    "blue": (30, 60, 200),
    "yellow": (230, 210, 40),
    "purple": (150, 40, 180),
    "orange": (240, 140, 20),
    "gray": (120, 120, 120),
    "white": (240, 240, 240),
    "maroon": (120, 20, 30),
    "navy": (15, 30, 110),
    "olive": (110, 110, 30),
    "dark_gray": (60, 60, 60),
}
_RGB_TO_NAME = {rgb: name for name, rgb in COLORS.items()}

SHAPE_WORD = {"sphere": "ball", "cylinder": "cylinder", "peg": "peg", "cube": "cube"}


@dataclass(frozen=True)
class SuccessCriterion:
    predicate_id: str
    kind: str
    tolerance: float
    hold_steps: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.hold_steps < 1:
            raise ValueError(f"hold_steps must be >= 1, got {self.hold_steps}")


@dataclass(frozen=True)
class TaskSpec:
    family: str
    tier: str
    template_id: int
    seed: int
    probe_params: dict
    fixed_params: dict
    instruction: str
    predicate_id: str
    entangled: bool
    scene_id: str


def fixed_params_hash(spec: TaskSpec) -> str:
    blob = json.dumps(spec.fixed_params, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def task_spec_to_json(spec: TaskSpec) -> dict:
    return {
        "family": spec.family,
        "tier": spec.tier,
        "template_id": spec.template_id,
        "seed": spec.seed,
        "probe_params": spec.probe_params,
        "fixed_params": spec.fixed_params,
        "instruction": spec.instruction,
        "predicate_id": spec.predicate_id,
        "entangled": spec.entangled,
        "scene_id": spec.scene_id,
    }


def task_spec_from_json(doc: dict) -> TaskSpec:
    return TaskSpec(**doc)


def list_tasks(families=None, tiers=None) -> list[tuple[str, str, int]]:
    """Stable enumeration of the catalog, optionally filtered."""
    fams = FAMILIES if families is None else tuple(f for f in FAMILIES if f in set(families))
    tier_set = TIERS if tiers is None else tuple(t for t in TIERS if t in set(tiers))
    return [(f, t, k) for f in fams for t in tier_set for k in TEMPLATE_IDS]


# ---------------------------------------------------------------------------
# Criterion evaluation.
#
# Kinds and their per-step semantics:
#   at_goal_pose      every (object, goal) pair within tolerance; flag after
#                     hold_steps consecutive satisfied states; optional
#                     "deadline" latches success only if reached in time
#   stacked_on        every (top, base) pair aligned within tolerance with the
#                     top resting on the base face; hold as above
#   inside_container  object footprint inside the container footprint, near
#                     table height; hold as above; optional yaw alignment
#   contacted_target  tip within CONTACT_RADIUS of the target surface; sticky
#                     once satisfied, optionally only inside a step window
#   relation_satisfied named spatial relation (see _relation_ok); hold as above
#   sequence_completed ordered subcriteria, each must flag in turn; sticky
#
# Goals are dicts: {"position": [x,y,z]} or {"object": id, "offset": [dx,dy,dz]}
# the latter resolving against the object's current pose, which is what makes
# moving-target criteria time-varying for free.


def resolve_goal(goal: dict, scene: SceneState) -> tuple[float, float, float]:
    if "position" in goal:
        x, y, z = goal["position"]
        return (float(x), float(y), float(z))
    ref = scene.object_by_id(goal["object"]).pose.position
    off = goal.get("offset", (0.0, 0.0, 0.0))
    return (ref[0] + off[0], ref[1] + off[1], ref[2] + off[2])


def _yaw_ok(obj: ObjectState, target_yaw: float, tol_rad: float) -> bool:
    # orientation criteria are yaw-only; compare on the half-circle since the
    # catalog's pegs and slots are 180-degree symmetric
    diff = (yaw_of(obj.pose.orientation) - target_yaw) % math.pi
    return min(diff, math.pi - diff) <= tol_rad


def _at_goal_ok(crit: SuccessCriterion, scene: SceneState) -> bool:
    deadline = crit.params.get("start_step")
    if deadline is not None and scene.sim_step < deadline:
        return False
    for target in crit.params["targets"]:
        obj = scene.object_by_id(target["object"])
        goal = resolve_goal(target["goal"], scene)
        if vec_dist(obj.pose.position, goal) > crit.tolerance:
            return False
        if "yaw" in target and not _yaw_ok(obj, target["yaw"], crit.params.get("yaw_tolerance", YAW_TOLERANCE)):
            return False
    return True


def _stacked_ok(crit: SuccessCriterion, scene: SceneState) -> bool:
    for pair in crit.params["pairs"]:
        top = scene.object_by_id(pair["top"])
        base = scene.object_by_id(pair["base"])
        tx, ty, _ = top.pose.position
        bx, by, _ = base.pose.position
        if abs(tx - bx) > crit.tolerance or abs(ty - by) > crit.tolerance:
            return False
        if abs(top.bottom_z - base.top_z) > crit.tolerance:
            return False
    return True


def _inside_ok(crit: SuccessCriterion, scene: SceneState) -> bool:
    for pair in crit.params["pairs"]:
        obj = scene.object_by_id(pair["object"])
        box = scene.object_by_id(pair["container"])
        ox, oy, _ = obj.pose.position
        bx, by, _ = box.pose.position
        margin_x = box.half[0] - obj.half[0] + crit.tolerance
        margin_y = box.half[1] - obj.half[1] + crit.tolerance
        if abs(ox - bx) > margin_x or abs(oy - by) > margin_y:
            return False
        if obj.bottom_z > box.top_z + crit.tolerance or obj.bottom_z < -crit.tolerance:
            return False
        if "yaw" in pair and not _yaw_ok(obj, pair["yaw"], crit.params.get("yaw_tolerance", YAW_TOLERANCE)):
            return False
    return True


def _contact_ok(crit: SuccessCriterion, scene: SceneState) -> bool:
    window = crit.params.get("window")
    if window is not None and not window[0] <= scene.sim_step <= window[1]:
        return False
    obj = scene.object_by_id(crit.params["target"])
    return signed_distance(tip_position(scene), obj) <= CONTACT_RADIUS


def _relation_ok(crit: SuccessCriterion, scene: SceneState) -> bool:
    p = crit.params
    relation = p["relation"]
    obj = scene.object_by_id(p["object"])
    if relation == "held_above":
        return obj.attached_to is not None and obj.pose.position[2] >= p["min_z"]
    if relation == "held_at_height":
        return obj.attached_to is not None and abs(obj.pose.position[2] - p["height"]) <= crit.tolerance
    if relation == "tip_near":
        return vec_dist(tip_position(scene), obj.pose.position) <= p["range"]
    ref = scene.object_by_id(p["reference"])
    ox, oy, _ = obj.pose.position
    rx, ry, _ = ref.pose.position
    if relation == "near":
        return obj.attached_to is None and vec_dist(obj.pose.position, ref.pose.position) <= p["range"]
    if relation == "far":
        return obj.attached_to is None and vec_dist(obj.pose.position, ref.pose.position) >= p["range"]
    if relation in ("left", "right", "front", "behind"):
        if obj.attached_to is not None:
            return False
        gap, band, reach = p["gap"], p["band"], p["range"]
        along = {"left": rx - ox, "right": ox - rx, "front": ry - oy, "behind": oy - ry}[relation]
        across = abs(oy - ry) if relation in ("left", "right") else abs(ox - rx)
        return along >= gap and across <= band and vec_dist(obj.pose.position, ref.pose.position) <= reach
    if relation == "beside":
        if obj.attached_to is not None:
            return False
        d = math.hypot(ox - rx, oy - ry)
        return p["gap"] <= d <= p["range"] and obj.bottom_z <= crit.tolerance
    raise SpecMismatch(f"unknown relation {relation!r}")


_KIND_CHECKS = {
    "at_goal_pose": _at_goal_ok,
    "stacked_on": _stacked_ok,
    "inside_container": _inside_ok,
    "contacted_target": _contact_ok,
    "relation_satisfied": _relation_ok,
}


def criterion_satisfied_now(crit: SuccessCriterion, scene: SceneState) -> bool:
    """Instantaneous check, ignoring hold/stickiness (sequence not supported)."""
    return _KIND_CHECKS[crit.kind](crit, scene)


def _resolve_conditional(crit: SuccessCriterion, scene: SceneState) -> SuccessCriterion:
    """Pick a branch from 'condition' against the (frozen) scene, if present."""
    cond = crit.params.get("condition")
    if cond is None:
        return crit
    kind = cond["kind"]
    if kind == "size_greater":
        a = scene.object_by_id(cond["a"]).size
        b = scene.object_by_id(cond["b"]).size
        truth = a > b
    elif kind == "largest_color_is":
        largest = max(
            (o for o in scene.objects if o.shape == "cube"), key=lambda o: (o.size, -o.id)
        )
        truth = largest.color == tuple(COLORS[cond["color"]])
    else:
        raise SpecMismatch(f"unknown condition {kind!r}")
    branch = crit.params["if_true"] if truth else crit.params["if_false"]
    return replace(crit, params=branch)


class CriterionTracker:
    """Feeds SceneStates in order and yields the per-step success flag."""

    def __init__(self, crit: SuccessCriterion):
        self.original = crit
        self.crit: SuccessCriterion | None = None  # conditional resolved on first state
        self.streak = 0
        self.latched = False
        self.sequence_index = 0
        self.subtrackers: list[CriterionTracker] | None = None

    def update(self, scene: SceneState) -> int:
        if self.crit is None:
            self.crit = _resolve_conditional(self.original, scene)
            if self.crit.kind == "sequence_completed":
                self.subtrackers = [
                    CriterionTracker(
                        SuccessCriterion(
                            predicate_id=f"{self.crit.predicate_id}[{i}]",
                            kind=sub["kind"],
                            tolerance=sub.get("tolerance", self.crit.tolerance),
                            hold_steps=sub.get("hold_steps", self.crit.hold_steps),
                            params=sub["params"],
                        )
                    )
                    for i, sub in enumerate(self.crit.params["steps"])
                ]
        crit = self.crit
        if self.latched:
            return 1
        if crit.kind == "sequence_completed":
            if self.sequence_index < len(self.subtrackers):
                if self.subtrackers[self.sequence_index].update(scene):
                    self.sequence_index += 1
            if self.sequence_index == len(self.subtrackers):
                self.latched = True
            return int(self.latched)
        if crit.kind == "contacted_target":
            if _contact_ok(crit, scene):
                self.latched = True
            return int(self.latched)
        ok = _KIND_CHECKS[crit.kind](crit, scene)
        self.streak = self.streak + 1 if ok else 0
        deadline = crit.params.get("deadline")
        if self.streak >= crit.hold_steps:
            if deadline is None:
                return 1
            if scene.sim_step <= deadline:
                self.latched = True
        return int(self.latched) if deadline is not None else int(self.streak >= crit.hold_steps)


def evaluate_success(spec: TaskSpec, trajectory: list[SceneState]) -> int:
    if not trajectory:
        raise TooShort("trajectory is empty")
    first = trajectory[0]
    if first.scene_id != spec.scene_id:
        raise SpecMismatch(f"scene {first.scene_id!r} does not match spec {spec.scene_id!r}")
    if first.embodiment.robot_id != DESK_ARM.robot_id or first.embodiment.dof != DESK_ARM.dof:
        raise SpecMismatch("trajectory embodiment differs from the catalog arm")
    tracker = CriterionTracker(criterion_for(spec))
    flag = 0
    for scene in trajectory:
        flag = tracker.update(scene)
    return flag


# ---------------------------------------------------------------------------
# Scene assembly helpers


def _min_dist_to(xy, keepout):
    if not keepout:
        return float("inf")
    return min(math.hypot(xy[0] - ex, xy[1] - ey) for ex, ey in keepout)


def _probe_xy(rp, draw, keepout, min_dist, tries=200):
    """Rejection-sample a probe point clear of keepout; falls back to the
    best candidate seen so the draw always terminates deterministically."""
    best, best_d = None, -1.0
    for _ in range(tries):
        cand = draw()
        d = _min_dist_to(cand, keepout)
        if d >= min_dist:
            return cand
        if d > best_d:
            best, best_d = cand, d
    return best


def _sample_xy(rng, existing, region=(-0.35, 0.35), min_dist=0.12, tries=200):
    lo, hi = region
    for _ in range(tries):
        x = rng.uniform(lo, hi)
        y = rng.uniform(lo, hi)
        if all(math.hypot(x - ex, y - ey) >= min_dist for ex, ey in existing):
            existing.append((x, y))
            return (x, y)
    # deterministic fallback: march a coarse grid
    for gx in range(-3, 4):
        for gy in range(-3, 4):
            x, y = gx * 0.11, gy * 0.11
            if all(math.hypot(x - ex, y - ey) >= min_dist for ex, ey in existing):
                existing.append((x, y))
                return (x, y)
    raise RuntimeError("workspace is too crowded")


def _obj(obj_id, shape, color_name, size, xy, yaw=0.0, z=None):
    hz = half_extents(shape, size)[2]
    return ObjectState(
        id=obj_id,
        shape=shape,
        color=COLORS[color_name],
        size=size,
        pose=Pose(
            position=(xy[0], xy[1], hz if z is None else z),
            orientation=quat_from_yaw(yaw),
        ),
    )


def _marker(obj_id, xy, color_name="white", size=0.07):
    return _obj(obj_id, "switch", color_name, size, xy)


def _goal_at(xy, z):
    return {"position": [xy[0], xy[1], z]}


def _cube_rest_z(size):
    return half_extents("cube", size)[2]


# ---------------------------------------------------------------------------
# Family builders. Each returns a dict with keys:
#   objects, scripts, events, probe_params, fixed_params, instruction,
#   predicate_id, criterion_params (closed over by criterion_for)


def _gen_control(tier, template_id, rf, rp, probe_override):
    objects, events, scripts = [], [], []
    placed = []
    if tier == "Easy":
        if template_id == 1:
            xy = _sample_xy(rf, placed)
            probe = {"lift_cm": rp.choice([12, 15, 18, 20])} if probe_override is None else probe_override
            size = 0.04
            objects.append(_obj(1, "cube", "gray", size, xy))
            goal_z = probe["lift_cm"] / 100.0
            instruction = f"Lift the cube {probe['lift_cm']} centimeters off the table"
            fixed = {"atomic_actions": 1, "cube_xy": list(xy), "size": size}
            crit = {
                "kind": "relation_satisfied",
                "params": {"relation": "held_at_height", "object": 1, "height": goal_z},
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "control.easy.lift", crit)
        if template_id == 2:
            xy = _sample_xy(rf, placed)
            if probe_override is None:
                # keep the goal clear of the cube's start so a fresh scene never succeeds
                mxy = _probe_xy(rp, lambda: [rp.uniform(0.05, 0.3), rp.uniform(-0.3, 0.3)], [xy], 0.15)
                probe = {"marker_xy": mxy}
            else:
                probe = probe_override
            size = 0.04
            objects.append(_obj(1, "cube", "gray", size, xy))
            objects.append(_marker(2, tuple(probe["marker_xy"])))
            instruction = "Place the cube on the marker"
            fixed = {"atomic_actions": 2, "cube_xy": list(xy), "size": size}
            crit = {
                "kind": "at_goal_pose",
                "params": {
                    "targets": [
                        {"object": 1, "goal": {"object": 2, "offset": [0.0, 0.0, _cube_rest_z(size)]}}
                    ]
                },
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "control.easy.place", crit)
        if template_id == 3:
            xy = _sample_xy(rf, placed, region=(-0.35, -0.05))
            probe = {"marker_xy": [rp.uniform(0.1, 0.35), rp.uniform(0.1, 0.35)]} if probe_override is None else probe_override
            size = 0.05
            objects.append(_obj(1, "sphere", "white", size, xy))
            objects.append(_marker(2, tuple(probe["marker_xy"]), color_name="orange"))
            instruction = "Move the ball onto the marker"
            fixed = {"atomic_actions": 2, "ball_xy": list(xy), "size": size}
            crit = {
                "kind": "at_goal_pose",
                "params": {
                    "targets": [{"object": 1, "goal": {"object": 2, "offset": [0.0, 0.0, size / 2.0]}}]
                },
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "control.easy.transfer", crit)
    if tier == "Medium":
        if template_id == 1:
            a = _sample_xy(rf, placed)
            b = _sample_xy(rf, placed)
            if probe_override is None:
                m1 = _probe_xy(rp, lambda: [rp.uniform(-0.35, -0.1), rp.uniform(-0.35, -0.1)], [a, b], 0.15)
                m2 = _probe_xy(rp, lambda: [rp.uniform(0.1, 0.35), rp.uniform(0.1, 0.35)], [a, b, tuple(m1)], 0.15)
                probe = {"marker1_xy": m1, "marker2_xy": m2}
            else:
                probe = probe_override
            size = 0.04
            objects.append(_obj(1, "cube", "gray", size, a))
            objects.append(_obj(2, "cube", "white", size, b))
            objects.append(_marker(3, tuple(probe["marker1_xy"])))
            objects.append(_marker(4, tuple(probe["marker2_xy"]), color_name="orange"))
            instruction = "Place the gray cube on the white marker and the white cube on the orange marker"
            fixed = {"atomic_actions": 4, "cubes_xy": [list(a), list(b)], "size": size}
            rest = _cube_rest_z(size)
            crit = {
                "kind": "at_goal_pose",
                "params": {
                    "targets": [
                        {"object": 1, "goal": {"object": 3, "offset": [0.0, 0.0, rest]}},
                        {"object": 2, "goal": {"object": 4, "offset": [0.0, 0.0, rest]}},
                    ]
                },
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "control.medium.relay", crit)
        if template_id == 2:
            a = _sample_xy(rf, placed)
            b = _sample_xy(rf, placed)
            if probe_override is None:
                txy = _probe_xy(rp, lambda: [rp.uniform(-0.3, 0.3), rp.uniform(-0.3, 0.3)], [a, b], 0.2)
                probe = {"tray_xy": txy}
            else:
                probe = probe_override
            size = 0.04
            objects.append(_obj(1, "cube", "gray", size, a))
            objects.append(_obj(2, "cube", "white", size, b))
            placed.append(tuple(probe["tray_xy"]))
            objects.append(_obj(3, "container", "navy", 0.16, tuple(probe["tray_xy"])))
            instruction = "Put both cubes in the tray"
            fixed = {"atomic_actions": 4, "cubes_xy": [list(a), list(b)], "size": size}
            crit = {
                "kind": "inside_container",
                "params": {
                    "pairs": [
                        {"object": 1, "container": 3},
                        {"object": 2, "container": 3},
                    ]
                },
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "control.medium.collect", crit)
        if template_id == 3:
            a = _sample_xy(rf, placed)
            b = _sample_xy(rf, placed)
            r = 0.14

            def line_marks(theta):
                return [(r * math.cos(theta), r * math.sin(theta)), (-r * math.cos(theta), -r * math.sin(theta))]

            if probe_override is None:
                theta = None
                for _ in range(200):
                    cand = rp.uniform(0.0, math.pi)
                    if all(_min_dist_to(m, [a, b]) >= 0.15 for m in line_marks(cand)):
                        theta = cand
                        break
                if theta is None:
                    grid = [i * math.pi / 64 for i in range(64)]
                    theta = max(grid, key=lambda t: min(_min_dist_to(m, [a, b]) for m in line_marks(t)))
                probe = {"line_angle": theta}
            else:
                probe = probe_override
            theta = probe["line_angle"]
            size = 0.04
            m1, m2 = line_marks(theta)
            objects.append(_obj(1, "cube", "gray", size, a))
            objects.append(_obj(2, "cube", "white", size, b))
            objects.append(_marker(3, m1))
            objects.append(_marker(4, m2, color_name="orange"))
            instruction = "Set the gray cube on the white mark and the white cube on the orange mark"
            fixed = {"atomic_actions": 4, "cubes_xy": [list(a), list(b)], "size": size, "radius": r}
            rest = _cube_rest_z(size)
            crit = {
                "kind": "at_goal_pose",
                "params": {
                    "targets": [
                        {"object": 1, "goal": {"object": 3, "offset": [0.0, 0.0, rest]}},
                        {"object": 2, "goal": {"object": 4, "offset": [0.0, 0.0, rest]}},
                    ]
                },
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "control.medium.line", crit)
    if tier == "Hard":
        if template_id == 1:
            sizes = [0.05, 0.04, 0.032]
            xys = [_sample_xy(rf, placed) for _ in sizes]
            if probe_override is None:
                bxy = _probe_xy(rp, lambda: [rp.uniform(-0.25, 0.25), rp.uniform(-0.25, 0.25)], xys, 0.15)
                probe = {"base_xy": bxy}
            else:
                probe = probe_override
            for i, (s, xy) in enumerate(zip(sizes, xys), start=1):
                objects.append(_obj(i, "cube", "gray", s, xy))
            objects.append(_marker(4, tuple(probe["base_xy"])))
            instruction = "Stack the three cubes into a tower on the marker, largest at the bottom"
            fixed = {"atomic_actions": 6, "sizes": sizes, "cubes_xy": [list(p) for p in xys]}
            crit = {
                "kind": "stacked_on",
                "params": {
                    "pairs": [{"top": 2, "base": 1}, {"top": 3, "base": 2}],
                    "anchor": {"object": 1, "goal_object": 4},
                },
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "control.hard.tower", crit)
        if template_id == 2:
            peg_size = 0.05
            socket_size = 0.036
            xys = [_sample_xy(rf, placed) for _ in range(3)]
            if probe_override is None:

                def socket_row(center):
                    return [(center[0] - 0.12, center[1]), (center[0], center[1]), (center[0] + 0.12, center[1])]

                center = None
                for _ in range(200):
                    cand = (rp.uniform(-0.2, 0.2), rp.uniform(-0.2, 0.2))
                    if all(_min_dist_to(s, xys) >= 0.16 for s in socket_row(cand)):
                        center = cand
                        break
                if center is None:
                    grid = [(gx * 0.05, gy * 0.05) for gx in range(-4, 5) for gy in range(-4, 5)]
                    center = max(grid, key=lambda c: min(_min_dist_to(s, xys) for s in socket_row(c)))
                probe = {"socket_center": list(center)}
            else:
                probe = probe_override
            cx, cy = probe["socket_center"]
            sockets = [(cx - 0.12, cy), (cx, cy), (cx + 0.12, cy)]
            for i, xy in enumerate(xys, start=1):
                objects.append(_obj(i, "peg", "gray", peg_size, xy))
            for i, xy in enumerate(sockets, start=4):
                objects.append(_obj(i, "container", "navy", socket_size, xy))
            instruction = "Insert each peg into its own socket, left to right"
            fixed = {"atomic_actions": 6, "pegs_xy": [list(p) for p in xys], "peg_size": peg_size, "socket_size": socket_size}
            crit = {
                "kind": "inside_container",
                "params": {
                    "pairs": [
                        {"object": 1, "container": 4},
                        {"object": 2, "container": 5},
                        {"object": 3, "container": 6},
                    ]
                },
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "control.hard.insert", crit)
        if template_id == 3:
            sizes = [0.04, 0.04, 0.04]
            xys = [_sample_xy(rf, placed) for _ in sizes]

            def line3_marks(theta, off):
                ux, uy = math.cos(theta), math.sin(theta)
                return [(off * -uy + d * ux, off * ux + d * uy) for d in (-0.15, 0.0, 0.15)]

            if probe_override is None:
                pick = None
                for _ in range(200):
                    cand = (rp.uniform(0.0, math.pi), rp.uniform(-0.1, 0.1))
                    if all(_min_dist_to(m, xys) >= 0.15 for m in line3_marks(*cand)):
                        pick = cand
                        break
                if pick is None:
                    grid = [(i * math.pi / 16, o * 0.05) for i in range(16) for o in range(-2, 3)]
                    pick = max(grid, key=lambda c: min(_min_dist_to(m, xys) for m in line3_marks(*c)))
                probe = {"line_angle": pick[0], "line_offset": pick[1]}
            else:
                probe = probe_override
            theta, off = probe["line_angle"], probe["line_offset"]
            marks = line3_marks(theta, off)
            for i, (s, xy) in enumerate(zip(sizes, xys), start=1):
                objects.append(_obj(i, "cube", "gray", s, xy))
            for i, xy in enumerate(marks, start=4):
                objects.append(_marker(i, xy, color_name=("white", "orange", "purple")[i - 4]))
            instruction = "Place one cube on each of the three marks"
            fixed = {"atomic_actions": 6, "cubes_xy": [list(p) for p in xys], "size": sizes[0]}
            rest = _cube_rest_z(sizes[0])
            crit = {
                "kind": "at_goal_pose",
                "params": {
                    "targets": [
                        {"object": i + 1, "goal": {"object": i + 4, "offset": [0.0, 0.0, rest]}}
                        for i in range(3)
                    ]
                },
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "control.hard.line3", crit)
    raise UnknownTemplate(f"Control/{tier}/{template_id}")


_PERCEPTION_COLOR_PROBES = ("red", "green", "blue", "yellow")
_PERCEPTION_SHAPE_PROBES = ("sphere", "cylinder", "peg")


def _gen_perception(tier, template_id, rf, rp, probe_override):
    objects, events, scripts = [], [], []
    placed = []
    target_xy = _sample_xy(rf, placed)
    tray_xy = _sample_xy(rf, placed, min_dist=0.18)
    n_extra = {"Easy": 2, "Medium": 4, "Hard": 6}[tier]
    extra_xy = [_sample_xy(rf, placed) for _ in range(n_extra)]
    fixed = {
        "target_xy": list(target_xy),
        "tray_xy": list(tray_xy),
        "distractors_xy": [list(p) for p in extra_xy],
    }
    if tier == "Hard":
        # constrained viewpoints: only the top and wrist cameras stay open
        fixed["camera_mask"] = ["front", "back", "left", "right"]
    distractor_colors = {
        "Easy": ("purple", "orange"),
        "Medium": ("maroon", "navy", "olive", "dark_gray"),
        "Hard": ("dark_gray",) * 6,
    }[tier]

    if template_id == 1:
        probe = {"target_color": rp.choice(_PERCEPTION_COLOR_PROBES)} if probe_override is None else probe_override
        objects.append(_obj(1, "cube", probe["target_color"], 0.04, target_xy))
        for i, xy in enumerate(extra_xy):
            objects.append(_obj(2 + i, "cube", distractor_colors[i % len(distractor_colors)], 0.04, xy))
        noun = f"the {probe['target_color']} cube"
        pid = f"perception.{tier.lower()}.color"
    elif template_id == 2:
        probe = {"target_shape": rp.choice(_PERCEPTION_SHAPE_PROBES)} if probe_override is None else probe_override
        objects.append(_obj(1, probe["target_shape"], "gray", 0.05, target_xy))
        for i, xy in enumerate(extra_xy):
            objects.append(_obj(2 + i, "cube", distractor_colors[i % len(distractor_colors)], 0.035 + 0.005 * (i % 3), xy))
        noun = f"the {SHAPE_WORD[probe['target_shape']]}"
        pid = f"perception.{tier.lower()}.shape"
    elif template_id == 3:
        sizes = {"Easy": (0.028, 0.06), "Medium": (0.036, 0.05), "Hard": (0.036, 0.05)}[tier]
        probe = {"target_size_label": rp.choice(["small", "large"])} if probe_override is None else probe_override
        size = sizes[0] if probe["target_size_label"] == "small" else sizes[1]
        objects.append(_obj(1, "cube", "gray", size, target_xy))
        mid = (sizes[0] + sizes[1]) / 2.0
        for i, xy in enumerate(extra_xy):
            objects.append(_obj(2 + i, "cube", "gray", mid, xy))
        fixed["size_choices"] = list(sizes)
        noun = f"the {probe['target_size_label']} cube"
        pid = f"perception.{tier.lower()}.size"
    else:
        raise UnknownTemplate(f"Perception/{tier}/{template_id}")

    tray_id = len(objects) + 1
    objects.append(_obj(tray_id, "container", "navy", 0.16, tray_xy))
    fixed["tray_id"] = tray_id
    crit = {
        "kind": "contacted_target",
        "params": {"target": 1},
        "entangled_kind": "inside_container",
        "entangled_params": {"pairs": [{"object": 1, "container": tray_id}]},
    }
    instruction = f"Touch {noun}"
    entangled_instruction = f"Put {noun} in the tray"
    return _pack(
        objects, scripts, events, probe, fixed, instruction, pid, crit,
        entangled_instruction=entangled_instruction,
    )


def _language_scene_objects(rf):
    """One frozen scene per seed shared by all nine Language templates."""
    sizes = [0.03, 0.042, 0.054]
    order = list(range(3))
    # deterministic distinct-size assignment to red/green/blue
    for i in range(2, 0, -1):
        j = rf.randint(0, i)
        order[i], order[j] = order[j], order[i]
    # cubes sit on a jittered diagonal: every pair keeps a gap on both axes,
    # so no directional relation between them holds in the fresh scene
    xys = [
        (-0.22 + 0.22 * i + rf.uniform(-0.04, 0.04), -0.22 + 0.22 * i + rf.uniform(-0.04, 0.04))
        for i in range(3)
    ]
    placed = list(xys)
    box_xy = _sample_xy(rf, placed, min_dist=0.16)
    mark_xy = _sample_xy(rf, placed)
    objects = [
        _obj(1, "cube", "red", sizes[order[0]], xys[0]),
        _obj(2, "cube", "green", sizes[order[1]], xys[1]),
        _obj(3, "cube", "blue", sizes[order[2]], xys[2]),
        _obj(4, "container", "navy", 0.16, box_xy),
        _marker(5, mark_xy),
    ]
    fixed = {
        "sizes_rgb": [sizes[order[0]], sizes[order[1]], sizes[order[2]]],
        "cubes_xy": [list(p) for p in xys],
        "box_xy": list(box_xy),
        "marker_xy": list(mark_xy),
    }
    return objects, fixed


_LANGUAGE_TEMPLATES = {
    ("Easy", 1): "Touch the red cube",
    ("Easy", 2): "Pick up the green cube",
    ("Easy", 3): "Put the blue cube in the box",
    ("Medium", 1): "Touch the cube that is neither red nor blue",
    ("Medium", 2): "Pick up the smallest cube",
    ("Medium", 3): "Place the red cube to the left of the blue cube",
    ("Hard", 1): (
        "If the red cube is larger than the green cube, put the red cube in the box; "
        "otherwise, put the green cube in the box"
    ),
    ("Hard", 2): (
        "If the blue cube is smaller than the red cube, touch the blue cube; "
        "otherwise, touch the red cube"
    ),
    ("Hard", 3): (
        "If the largest cube is red, stack the green cube on the red cube; "
        "otherwise, stack the red cube on the blue cube"
    ),
}


def _gen_language(tier, template_id, rf, rp, probe_override):
    objects, fixed = _language_scene_objects(rf)
    key = (tier, template_id)
    if key not in _LANGUAGE_TEMPLATES:
        raise UnknownTemplate(f"Language/{tier}/{template_id}")
    instruction = _LANGUAGE_TEMPLATES[key]
    probe = {"utterance": f"{tier}-{template_id}"} if probe_override is None else probe_override
    sizes = fixed["sizes_rgb"]
    rest = {1: sizes[0] / 2.0, 2: sizes[1] / 2.0, 3: sizes[2] / 2.0}
    if key == ("Easy", 1):
        crit = {"kind": "contacted_target", "params": {"target": 1}}
    elif key == ("Easy", 2):
        crit = {
            "kind": "relation_satisfied",
            "params": {"relation": "held_above", "object": 2, "min_z": 0.1},
        }
    elif key == ("Easy", 3):
        crit = {"kind": "inside_container", "params": {"pairs": [{"object": 3, "container": 4}]}}
    elif key == ("Medium", 1):
        crit = {"kind": "contacted_target", "params": {"target": 2}}
    elif key == ("Medium", 2):
        smallest = min(range(3), key=lambda i: sizes[i]) + 1
        crit = {
            "kind": "relation_satisfied",
            "params": {"relation": "held_above", "object": smallest, "min_z": 0.1},
        }
    elif key == ("Medium", 3):
        crit = {
            "kind": "relation_satisfied",
            "params": {"relation": "left", "object": 1, "reference": 3, "gap": 0.05, "band": 0.08, "range": 0.3},
        }
    elif key == ("Hard", 1):
        crit = {
            "kind": "inside_container",
            "params": {
                "condition": {"kind": "size_greater", "a": 1, "b": 2},
                "if_true": {"pairs": [{"object": 1, "container": 4}]},
                "if_false": {"pairs": [{"object": 2, "container": 4}]},
            },
        }
    elif key == ("Hard", 2):
        crit = {
            "kind": "contacted_target",
            "params": {
                "condition": {"kind": "size_greater", "a": 1, "b": 3},
                "if_true": {"target": 3},
                "if_false": {"target": 1},
            },
        }
    else:
        crit = {
            "kind": "stacked_on",
            "params": {
                "condition": {"kind": "largest_color_is", "color": "red"},
                "if_true": {"pairs": [{"top": 2, "base": 1}]},
                "if_false": {"pairs": [{"top": 1, "base": 3}]},
            },
        }
    pid = f"language.{tier.lower()}.{template_id}"
    return _pack(objects, [], [], probe, fixed, instruction, pid, crit)


def _gen_dynamic(tier, template_id, rf, rp, probe_override):
    objects, events, scripts = [], [], []
    placed = []
    if tier == "Easy":
        if template_id == 1:
            xy = _sample_xy(rf, placed)
            probe = {"window_start": rp.randint(40, 80)} if probe_override is None else probe_override
            t0 = probe["window_start"]
            window = [t0, t0 + 100]
            objects.append(_obj(1, "switch", "gray", 0.08, xy))
            events.append(Event(t0, "attribute_switch", {"object_id": 1, "color": list(COLORS["yellow"])}))
            events.append(Event(window[1], "attribute_switch", {"object_id": 1, "color": list(COLORS["gray"])}))
            instruction = "Press the switch while it is lit"
            fixed = {"switch_xy": list(xy), "window_length": 100}
            crit = {"kind": "contacted_target", "params": {"target": 1, "window": window}}
            return _pack(objects, scripts, events, probe, fixed, instruction, "dynamic.easy.switch", crit)
        if template_id == 2:
            xy = _sample_xy(rf, placed)
            mxy = _sample_xy(rf, placed)
            probe = {"deadline": rp.randint(160, 240)} if probe_override is None else probe_override
            size = 0.04
            objects.append(_obj(1, "cube", "gray", size, xy))
            objects.append(_marker(2, mxy))
            instruction = "Place the cube on the marker before time runs out"
            fixed = {"cube_xy": list(xy), "marker_xy": list(mxy), "size": size}
            crit = {
                "kind": "at_goal_pose",
                "params": {
                    "targets": [{"object": 1, "goal": {"object": 2, "offset": [0.0, 0.0, _cube_rest_z(size)]}}],
                    "deadline": probe["deadline"],
                },
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "dynamic.easy.deadline", crit)
        if template_id == 3:
            a = _sample_xy(rf, placed)
            b = _sample_xy(rf, placed)
            probe = {"reveal_step": rp.randint(30, 70)} if probe_override is None else probe_override
            t0 = probe["reveal_step"]
            objects.append(_obj(1, "cube", "gray", 0.04, a))
            objects.append(_obj(2, "cube", "gray", 0.04, b))
            events.append(Event(t0, "attribute_switch", {"object_id": 1, "color": list(COLORS["green"])}))
            instruction = "Touch the cube that turns green"
            fixed = {"cubes_xy": [list(a), list(b)]}
            crit = {"kind": "contacted_target", "params": {"target": 1, "window": [t0, 10**9]}}
            return _pack(objects, scripts, events, probe, fixed, instruction, "dynamic.easy.reveal", crit)
    speed_range = {"Medium": (0.04, 0.1), "Hard": (0.05, 0.12)}[tier]
    probe = {"speed": rp.uniform(*speed_range)} if probe_override is None else probe_override
    speed = probe["speed"]
    heading = rf.uniform(0.0, 2.0 * math.pi)
    vel = (speed * math.cos(heading), speed * math.sin(heading), 0.0)
    # the path runs through the table center, so anything that must stay off
    # the path sits at a perpendicular offset from the origin
    start = (-0.3 * math.cos(heading), -0.3 * math.sin(heading))
    normal = (-math.sin(heading), math.cos(heading))

    def make_script(obj_id, hz):
        anchor = (start[0], start[1], hz)
        if tier == "Medium":
            return MotionScript(obj_id, (MotionSegment(0, anchor, vel),))
        turn = rf.randint(60, 120)
        mid = (anchor[0] + vel[0] * turn * 0.05, anchor[1] + vel[1] * turn * 0.05, hz)
        nvel = (-vel[1], vel[0], 0.0)  # 90-degree redirect, same speed
        return MotionScript(obj_id, (MotionSegment(0, anchor, vel), MotionSegment(turn, mid, nvel)))

    if template_id == 1:
        size = 0.05
        hz = half_extents("sphere", size)[2]
        objects.append(_obj(1, "sphere", "white", size, start, z=hz))
        scripts.append(make_script(1, hz))
        instruction = "Touch the moving ball"
        fixed = {"heading": heading, "start": list(start)}
        crit = {"kind": "contacted_target", "params": {"target": 1}}
        pid = f"dynamic.{tier.lower()}.intercept"
    elif template_id == 2:
        # Hard redirects turn toward +normal, so the cube waits on the other side
        sign = -1.0 if tier == "Hard" else rf.choice([-1.0, 1.0])
        d = rf.uniform(0.16, 0.22)
        cxy = (sign * d * normal[0], sign * d * normal[1])
        size = 0.042
        objects.append(_obj(1, "cube", "gray", size, cxy))
        hz = half_extents("container", 0.16)[2]
        objects.append(_obj(2, "container", "navy", 0.16, start, z=hz))
        scripts.append(make_script(2, hz))
        instruction = "Put the cube in the moving tray"
        fixed = {"cube_xy": list(cxy), "heading": heading, "start": list(start)}
        crit = {"kind": "inside_container", "params": {"pairs": [{"object": 1, "container": 2}]}}
        pid = f"dynamic.{tier.lower()}.tray"
    elif template_id == 3:
        size = 0.045
        hz = half_extents("cube", size)[2]
        objects.append(_obj(1, "cube", "white", size, start, z=hz))
        scripts.append(make_script(1, hz))
        rng_range = 0.06 if tier == "Medium" else 0.045
        hold = 8 if tier == "Medium" else 10
        instruction = "Keep the gripper close to the moving cube"
        fixed = {"heading": heading, "start": list(start)}
        crit = {
            "kind": "relation_satisfied",
            "params": {"relation": "tip_near", "object": 1, "range": rng_range},
            "hold_steps": hold,
        }
        pid = f"dynamic.{tier.lower()}.follow"
    else:
        raise UnknownTemplate(f"DynamicAdaptation/{tier}/{template_id}")
    return _pack(objects, scripts, events, probe, fixed, instruction, pid, crit)


def _spatial_target_xy(rf, ref_xy, axis_gap=0.09, lo=0.15, hi=0.28):
    """Start position that satisfies no directional or proximity relation:
    distance inside (lo, hi) and clearance from the reference on both axes."""
    for _ in range(200):
        x, y = rf.uniform(-0.35, 0.35), rf.uniform(-0.35, 0.35)
        d = math.hypot(x - ref_xy[0], y - ref_xy[1])
        if lo <= d <= hi and abs(x - ref_xy[0]) >= axis_gap and abs(y - ref_xy[1]) >= axis_gap:
            return (x, y)
    sx = 1.0 if ref_xy[0] <= 0 else -1.0
    sy = 1.0 if ref_xy[1] <= 0 else -1.0
    return (ref_xy[0] + sx * 0.16, ref_xy[1] + sy * 0.16)


def _gen_spatial(tier, template_id, rf, rp, probe_override):
    objects, events, scripts = [], [], []
    placed = []
    if tier == "Easy":
        ref_xy = (rf.uniform(-0.1, 0.1), rf.uniform(-0.1, 0.1))
        placed.append(ref_xy)
        tgt_xy = _spatial_target_xy(rf, ref_xy)
        placed.append(tgt_xy)
        if template_id == 1:
            probe = {"side": rp.choice(["left", "right", "front", "behind"])} if probe_override is None else probe_override
            objects.append(_obj(1, "cube", "blue", 0.045, ref_xy))
            objects.append(_obj(2, "cube", "gray", 0.04, tgt_xy))
            word = {"left": "left of", "right": "right of", "front": "front of", "behind": "back of"}[probe["side"]]
            instruction = f"Place the gray cube to the {word} the blue cube"
            fixed = {"ref_xy": list(ref_xy), "target_xy": list(tgt_xy)}
            crit = {
                "kind": "relation_satisfied",
                "params": {"relation": probe["side"], "object": 2, "reference": 1, "gap": 0.06, "band": 0.08, "range": 0.25},
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "spatial.easy.side", crit)
        if template_id == 2:
            probe = {"proximity": rp.choice(["near", "far"])} if probe_override is None else probe_override
            objects.append(_obj(1, "cube", "blue", 0.045, ref_xy))
            objects.append(_obj(2, "cube", "gray", 0.04, tgt_xy))
            phrase = "right next to" if probe["proximity"] == "near" else "far away from"
            instruction = f"Place the gray cube {phrase} the blue cube"
            fixed = {"ref_xy": list(ref_xy), "target_xy": list(tgt_xy)}
            rng_val = 0.1 if probe["proximity"] == "near" else 0.3
            crit = {
                "kind": "relation_satisfied",
                "params": {"relation": probe["proximity"], "object": 2, "reference": 1, "range": rng_val},
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "spatial.easy.proximity", crit)
        if template_id == 3:
            marks = [_sample_xy(rf, placed) for _ in range(3)]
            mids = [
                ((marks[i][0] + marks[j][0]) / 2.0, (marks[i][1] + marks[j][1]) / 2.0)
                for i, j in ((0, 1), (0, 2), (1, 2))
            ]
            cube_xy = None
            for _ in range(200):
                cand = (rf.uniform(-0.35, 0.35), rf.uniform(-0.35, 0.35))
                if _min_dist_to(cand, mids) >= 0.07 and _min_dist_to(cand, marks) >= 0.12:
                    cube_xy = cand
                    break
            if cube_xy is None:
                grid = [(gx * 0.11, gy * 0.11) for gx in range(-3, 4) for gy in range(-3, 4)]
                cube_xy = max(grid, key=lambda c: min(_min_dist_to(c, mids), _min_dist_to(c, marks)))
            probe = {"pair": sorted(rp.sample([0, 1, 2], 2))} if probe_override is None else probe_override
            i, j = probe["pair"]
            size = 0.04
            objects.append(_obj(1, "cube", "gray", size, cube_xy))
            names = ("white", "orange", "purple")
            for k, mxy in enumerate(marks):
                objects.append(_marker(2 + k, mxy, color_name=names[k]))
            mid = ((marks[i][0] + marks[j][0]) / 2.0, (marks[i][1] + marks[j][1]) / 2.0)
            instruction = f"Place the cube halfway between the {names[i]} mark and the {names[j]} mark"
            fixed = {"marks_xy": [list(m) for m in marks], "target_xy": list(cube_xy)}
            crit = {
                "kind": "at_goal_pose",
                "params": {"targets": [{"object": 1, "goal": _goal_at(mid, _cube_rest_z(size))}]},
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "spatial.easy.between", crit)
    if tier == "Medium":
        if template_id == 1:
            a = _sample_xy(rf, placed)
            b = _sample_xy(rf, placed)
            c = _sample_xy(rf, placed)
            probe = {"base_color": rp.choice(["red", "blue"])} if probe_override is None else probe_override
            objects.append(_obj(1, "cube", "red", 0.05, a))
            objects.append(_obj(2, "cube", "blue", 0.05, b))
            objects.append(_obj(3, "cube", "gray", 0.04, c))
            base = 1 if probe["base_color"] == "red" else 2
            instruction = f"Stack the gray cube on top of the {probe['base_color']} cube"
            fixed = {"bases_xy": [list(a), list(b)], "target_xy": list(c)}
            crit = {"kind": "stacked_on", "params": {"pairs": [{"top": 3, "base": base}]}}
            return _pack(objects, scripts, events, probe, fixed, instruction, "spatial.medium.stack", crit)
        if template_id == 2:
            bxy = _sample_xy(rf, placed, min_dist=0.16)
            cxy = None
            # start outside the "beside" annulus so neither probe value is pre-met
            for _ in range(200):
                cand = (rf.uniform(-0.35, 0.35), rf.uniform(-0.35, 0.35))
                if _min_dist_to(cand, [bxy]) >= 0.26:
                    cxy = cand
                    break
            if cxy is None:
                norm = math.hypot(bxy[0], bxy[1])
                ux, uy = ((bxy[0] / norm, bxy[1] / norm) if norm > 1e-9 else (1.0, 0.0))
                cxy = (bxy[0] - ux * 0.3, bxy[1] - uy * 0.3)
            placed.append(cxy)
            probe = {"where": rp.choice(["in", "beside"])} if probe_override is None else probe_override
            size = 0.042
            objects.append(_obj(1, "cube", "gray", size, cxy))
            objects.append(_obj(2, "container", "navy", 0.16, bxy))
            instruction = f"Place the cube {'inside' if probe['where'] == 'in' else 'beside'} the box"
            fixed = {"box_xy": list(bxy), "cube_xy": list(cxy)}
            if probe["where"] == "in":
                crit = {"kind": "inside_container", "params": {"pairs": [{"object": 1, "container": 2}]}}
            else:
                crit = {
                    "kind": "relation_satisfied",
                    "params": {"relation": "beside", "object": 1, "reference": 2, "gap": 0.1, "range": 0.22},
                }
            return _pack(objects, scripts, events, probe, fixed, instruction, "spatial.medium.containment", crit)
        if template_id == 3:
            xy = _sample_xy(rf, placed)
            probe = {"height_cm": rp.choice([10, 18])} if probe_override is None else probe_override
            objects.append(_obj(1, "cube", "gray", 0.04, xy))
            instruction = f"Hold the cube {probe['height_cm']} centimeters above the table"
            fixed = {"cube_xy": list(xy)}
            crit = {
                "kind": "relation_satisfied",
                "params": {"relation": "held_at_height", "object": 1, "height": probe["height_cm"] / 100.0},
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "spatial.medium.height", crit)
    if tier == "Hard":
        if template_id == 1:
            pxy = _sample_xy(rf, placed)
            mxy = _sample_xy(rf, placed)
            probe = {"yaw_deg": rp.choice([0, 45, 90])} if probe_override is None else probe_override
            yaw = math.radians(probe["yaw_deg"])
            size = 0.05
            objects.append(_obj(1, "peg", "gray", size, pxy))
            objects.append(_marker(2, mxy))
            instruction = f"Place the peg on the mark rotated {probe['yaw_deg']} degrees"
            fixed = {"peg_xy": list(pxy), "marker_xy": list(mxy), "size": size}
            crit = {
                "kind": "at_goal_pose",
                "params": {
                    "targets": [
                        {
                            "object": 1,
                            "goal": {"object": 2, "offset": [0.0, 0.0, half_extents("peg", size)[2]]},
                            "yaw": yaw,
                        }
                    ]
                },
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "spatial.hard.yaw", crit)
        if template_id == 2:
            pxy = _sample_xy(rf, placed)
            sxy = _sample_xy(rf, placed)
            probe = {"slot_yaw_deg": rp.choice([0, 30, 60])} if probe_override is None else probe_override
            yaw = math.radians(probe["slot_yaw_deg"])
            peg_size = 0.05
            objects.append(_obj(1, "peg", "gray", peg_size, pxy))
            objects.append(_obj(2, "container", "navy", 0.04, sxy, yaw=yaw))
            instruction = f"Insert the peg into the slot, matching its {probe['slot_yaw_deg']}-degree angle"
            fixed = {"peg_xy": list(pxy), "slot_xy": list(sxy), "peg_size": peg_size}
            crit = {
                "kind": "inside_container",
                "params": {"pairs": [{"object": 1, "container": 2, "yaw": yaw}]},
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "spatial.hard.slot", crit)
        if template_id == 3:
            ref_xy = (rf.uniform(0.12, 0.3) * rf.choice([-1, 1]), rf.uniform(0.12, 0.3) * rf.choice([-1, 1]))
            placed.append(ref_xy)
            mirrors = [(ref_xy[0], -ref_xy[1]), (-ref_xy[0], ref_xy[1])]
            txy = None
            for _ in range(200):
                cand = (rf.uniform(-0.35, 0.35), rf.uniform(-0.35, 0.35))
                if _min_dist_to(cand, [ref_xy]) >= 0.12 and _min_dist_to(cand, mirrors) >= 0.06:
                    txy = cand
                    break
            if txy is None:
                txy = (0.0, 0.0) if _min_dist_to((0.0, 0.0), mirrors + [ref_xy]) >= 0.06 else (0.05, -0.05)
            probe = {"axis": rp.choice(["x", "y"])} if probe_override is None else probe_override
            size = 0.04
            objects.append(_obj(1, "cube", "blue", 0.045, ref_xy))
            objects.append(_obj(2, "cube", "gray", size, txy))
            mirror = (ref_xy[0], -ref_xy[1]) if probe["axis"] == "x" else (-ref_xy[0], ref_xy[1])
            instruction = f"Place the gray cube at the blue cube's mirror position across the {probe['axis']} axis"
            fixed = {"ref_xy": list(ref_xy), "target_xy": list(txy)}
            crit = {
                "kind": "at_goal_pose",
                "params": {"targets": [{"object": 2, "goal": _goal_at(mirror, _cube_rest_z(size))}]},
            }
            return _pack(objects, scripts, events, probe, fixed, instruction, "spatial.hard.mirror", crit)
    raise UnknownTemplate(f"SpatialReasoning/{tier}/{template_id}")


_ROBUSTNESS_RECOLORS = ("orange", "purple", "olive")
_DISTRACTOR_SHAPES = ("cube", "sphere", "cylinder")
_DISTRACTOR_COLORS = ("purple", "orange", "olive", "maroon")
_LAYOUTS = ("corner", "edge", "cluster")


def _remap_xy(xy, layout, center):
    x, y = xy
    if layout == "corner":
        return (x * 0.45 + 0.24, y * 0.45 + 0.24)
    if layout == "edge":
        return (x, y * 0.45 + 0.25)
    return (x * 0.4 + center[0], y * 0.4 + center[1])


def _gen_robustness(tier, template_id, rf, rp, probe_override):
    """Control-Easy base scene with a tier-graded perturbation as the probe.

    Easy adds clutter, Medium also recolors the manipuland, Hard additionally
    rebuilds the whole layout in an unusual part of the workspace. The base
    goal geometry comes from a stream forked off the fixed stream, so for Easy
    and Medium only the perturbation varies with the probe.
    """
    base_goal_rng = random.Random(rf.getrandbits(64))
    if tier == "Easy":
        if probe_override is None:
            probe = {"n_distractors": rp.choice([1, 2]), "clutter_seed": rp.getrandbits(32)}
        else:
            probe = probe_override
        base = _gen_control("Easy", template_id, rf, base_goal_rng, None)
        recolor = None
        layout = None
    elif tier == "Medium":
        if probe_override is None:
            probe = {
                "recolor": rp.choice(_ROBUSTNESS_RECOLORS),
                "n_distractors": 3,
                "clutter_seed": rp.getrandbits(32),
            }
        else:
            probe = probe_override
        base = _gen_control("Easy", template_id, rf, base_goal_rng, None)
        recolor = probe["recolor"]
        layout = None
    elif tier == "Hard":
        if probe_override is None:
            probe = {
                "layout": rp.choice(_LAYOUTS),
                "recolor": rp.choice(_ROBUSTNESS_RECOLORS),
                "n_distractors": 4,
                "clutter_seed": rp.getrandbits(32),
                "layout_seed": rp.getrandbits(32),
            }
        else:
            probe = probe_override
        layout_rng = random.Random(probe["layout_seed"])
        base = _gen_control("Easy", template_id, layout_rng, random.Random(layout_rng.getrandbits(64)), None)
        recolor = probe["recolor"]
        layout = probe["layout"]
    else:
        raise UnknownTemplate(f"Robustness/{tier}/{template_id}")

    objects = list(base["objects"])
    if layout is not None:
        center_rng = random.Random(probe["layout_seed"] ^ 0x5EED)
        center = (center_rng.uniform(-0.15, 0.15), center_rng.uniform(-0.15, 0.15))
        for i, obj in enumerate(objects):
            x, y, z = obj.pose.position
            nx, ny = _remap_xy((x, y), layout, center)
            objects[i] = replace(obj, pose=replace(obj.pose, position=(nx, ny, z)))
    if recolor is not None:
        objects[0] = replace(objects[0], color=COLORS[recolor])

    clutter_rng = random.Random(probe["clutter_seed"])
    placed = [(o.pose.position[0], o.pose.position[1]) for o in objects]
    next_id = max(o.id for o in objects) + 1
    for i in range(probe["n_distractors"]):
        xy = _sample_xy(clutter_rng, placed, min_dist=0.1)
        objects.append(
            _obj(
                next_id + i,
                _DISTRACTOR_SHAPES[i % len(_DISTRACTOR_SHAPES)],
                _DISTRACTOR_COLORS[i % len(_DISTRACTOR_COLORS)],
                0.035 + 0.004 * i,
                xy,
            )
        )

    if tier == "Hard":
        fixed = {
            "base_template": template_id,
            "atomic_actions": base["fixed_params"]["atomic_actions"],
            "perturbation_severity": 3,
        }
    else:
        fixed = {
            "base_template": template_id,
            "base_fixed": base["fixed_params"],
            "base_probe": base["probe_params"],
            "perturbation_severity": 1 if tier == "Easy" else 2,
        }
    pid = base["predicate_id"].replace("control.easy", f"robustness.{tier.lower()}")
    return _pack(
        objects, base["scripts"], base["events"], probe, fixed, base["instruction"], pid, base["criterion"]
    )


_FAMILY_BUILDERS = {
    "Control": _gen_control,
    "Perception": _gen_perception,
    "Language": _gen_language,
    "DynamicAdaptation": _gen_dynamic,
    "SpatialReasoning": _gen_spatial,
    "Robustness": _gen_robustness,
}


def _build(family, tier, template_id, seed, probe_override, entangled):
    if family not in FAMILIES:
        raise UnknownTemplate(f"unknown family {family!r}")
    if tier not in TIERS:
        raise UnknownTemplate(f"unknown tier {tier!r}")
    if template_id not in TEMPLATE_IDS:
        raise UnknownTemplate(f"unknown template_id {template_id!r}")
    if entangled and family != "Perception":
        raise SpecMismatch("entangled predicate variants exist only for Perception")
    if family == "Language":
        rf = substream(seed, family, "scene")
    else:
        rf = substream(seed, family, tier, str(template_id), "fixed")
    rp = substream(seed, family, tier, str(template_id), "probe")
    return _FAMILY_BUILDERS[family](tier, template_id, rf, rp, probe_override)


def scene_id_for(family, tier, template_id, seed) -> str:
    # Language scenes are frozen per seed across all nine templates, and the
    # id says so; everything else keys the full catalog coordinate
    if family == "Language":
        return f"Language-s{seed}"
    return f"{family}-{tier}-T{template_id}-s{seed}"


def generate_task(
    family: str,
    tier: str,
    template_id: int,
    seed: int,
    probe_override: dict | None = None,
    entangled: bool = False,
) -> tuple[TaskSpec, SceneState]:
    built = _build(family, tier, template_id, seed, probe_override, entangled)
    instruction = built["instruction"]
    if entangled and built["entangled_instruction"] is not None:
        instruction = built["entangled_instruction"]
    sid = scene_id_for(family, tier, template_id, seed)
    spec = TaskSpec(
        family=family,
        tier=tier,
        template_id=template_id,
        seed=seed,
        probe_params=built["probe_params"],
        fixed_params=built["fixed_params"],
        instruction=instruction,
        predicate_id=built["predicate_id"],
        entangled=bool(entangled),
        scene_id=sid,
    )
    scene = make_scene(sid, DESK_ARM, tuple(built["objects"]), HOME_Q, motion_scripts=built["scripts"])
    for event in built["events"]:
        scene = inject_event(scene, event)
    return spec, scene


def criterion_for(spec: TaskSpec) -> SuccessCriterion:
    """Rebuild the success criterion from the spec alone.

    Generation is deterministic given (family, tier, template, seed, probe),
    so the criterion is recovered by re-running the builder with the spec's
    probe values pinned; nothing probe-derived ever hides in fixed_params.
    """
    built = _build(
        spec.family, spec.tier, spec.template_id, spec.seed, spec.probe_params, spec.entangled
    )
    doc = built["criterion"]
    if spec.entangled:
        kind, params = doc["entangled_kind"], doc["entangled_params"]
    else:
        kind, params = doc["kind"], doc["params"]
    tolerance = CONTACT_RADIUS if kind == "contacted_target" else POSITION_TOLERANCE[spec.tier]
    return SuccessCriterion(
        predicate_id=spec.predicate_id,
        kind=kind,
        tolerance=tolerance,
        hold_steps=doc.get("hold_steps", HOLD_STEPS),
        params=params,
    )


# ---------------------------------------------------------------------------
# Declarative objectives for scripted policies.
#
# expert_goals flattens a criterion against the current scene into an ordered
# list of outstanding objectives:
#   ("place", object_id, (x, y, z), yaw_or_None)   grasp, carry, release
#   ("hold", object_id, (x, y, z))                 grasp and keep holding there
#   ("touch", object_id, earliest_step_or_None)    tip to the surface, no grasp
#   ("follow", object_id)                          continuous pursuit
# An empty list means everything is satisfied and the arm should park.


def _single_goal_met(crit, target, scene):
    obj = scene.object_by_id(target["object"])
    if obj.attached_to is not None:
        return False
    goal = resolve_goal(target["goal"], scene)
    if vec_dist(obj.pose.position, goal) > crit.tolerance:
        return False
    if "yaw" in target and not _yaw_ok(obj, target["yaw"], crit.params.get("yaw_tolerance", YAW_TOLERANCE)):
        return False
    return True


def _pair_stacked_met(crit, pair, scene):
    return _stacked_ok(replace(crit, params={"pairs": [pair]}), scene)


def _pair_inside_met(crit, pair, scene):
    base = {k: v for k, v in crit.params.items() if k not in ("pairs", "condition")}
    return _inside_ok(replace(crit, params={**base, "pairs": [pair]}), scene)


def expert_goals(crit: SuccessCriterion, scene: SceneState, tracker: CriterionTracker | None = None):
    if tracker is not None and tracker.crit is not None:
        crit = tracker.crit
    else:
        crit = _resolve_conditional(crit, scene)
    goals = []
    if crit.kind == "sequence_completed":
        start = tracker.sequence_index if tracker is not None else 0
        subs = crit.params["steps"]
        for i in range(start, len(subs)):
            sub = subs[i]
            sub_crit = SuccessCriterion(
                predicate_id=f"{crit.predicate_id}[{i}]",
                kind=sub["kind"],
                tolerance=sub.get("tolerance", crit.tolerance),
                hold_steps=sub.get("hold_steps", crit.hold_steps),
                params=sub["params"],
            )
            goals.extend(expert_goals(sub_crit, scene))
        return goals
    if crit.kind == "at_goal_pose":
        for target in crit.params["targets"]:
            if not _single_goal_met(crit, target, scene):
                goal = resolve_goal(target["goal"], scene)
                if "object" in target["goal"]:
                    lead = scripted_lead(scene, target["goal"]["object"])
                    goal = (goal[0] + lead[0], goal[1] + lead[1], goal[2] + lead[2])
                goals.append(("place", target["object"], goal, target.get("yaw")))
        return goals
    if crit.kind == "stacked_on":
        anchor = crit.params.get("anchor")
        if anchor is not None:
            obj = scene.object_by_id(anchor["object"])
            base_goal = resolve_goal(
                {"object": anchor["goal_object"], "offset": [0.0, 0.0, obj.half[2]]}, scene
            )
            if obj.attached_to is not None or vec_dist(obj.pose.position, base_goal) > crit.tolerance:
                goals.append(("place", anchor["object"], base_goal, None))
        for pair in crit.params["pairs"]:
            if not _pair_stacked_met(crit, pair, scene):
                top = scene.object_by_id(pair["top"])
                base = scene.object_by_id(pair["base"])
                bx, by, _ = base.pose.position
                goals.append(("place", pair["top"], (bx, by, base.top_z + top.half[2]), None))
        return goals
    if crit.kind == "inside_container":
        for pair in crit.params["pairs"]:
            if not _pair_inside_met(crit, pair, scene):
                obj = scene.object_by_id(pair["object"])
                box = scene.object_by_id(pair["container"])
                bx, by, _ = box.pose.position
                lead = scripted_lead(scene, pair["container"])
                goals.append(
                    ("place", pair["object"], (bx + lead[0], by + lead[1], obj.half[2]), pair.get("yaw"))
                )
        return goals
    if crit.kind == "contacted_target":
        if tracker is not None and tracker.latched:
            return []
        window = crit.params.get("window")
        return [("touch", crit.params["target"], None if window is None else window[0])]
    if crit.kind == "relation_satisfied":
        p = crit.params
        relation = p["relation"]
        obj = scene.object_by_id(p["object"])
        ox, oy, oz = obj.pose.position
        if relation == "held_above":
            if _relation_ok(crit, scene):
                return [("hold", p["object"], (ox, oy, max(oz, p["min_z"] + 0.03)))]
            return [("hold", p["object"], (ox, oy, p["min_z"] + 0.03))]
        if relation == "held_at_height":
            return [("hold", p["object"], (ox, oy, p["height"]))]
        if relation == "tip_near":
            return [("follow", p["object"])]
        if _relation_ok(crit, scene):
            return []
        ref = scene.object_by_id(p["reference"]).pose.position
        rx, ry = ref[0], ref[1]
        rest = obj.half[2]
        if relation in ("left", "right", "front", "behind"):
            gap = p["gap"] + 0.04
            goal_xy = {
                "left": (rx - gap, ry),
                "right": (rx + gap, ry),
                "front": (rx, ry - gap),
                "behind": (rx, ry + gap),
            }[relation]
            return [("place", p["object"], (goal_xy[0], goal_xy[1], rest), None)]
        norm = math.hypot(rx, ry)
        ux, uy = ((rx / norm, ry / norm) if norm > 1e-9 else (1.0, 0.0))
        if relation == "near":
            d = 0.06
        elif relation == "far":
            d = p["range"] + 0.06
        else:  # beside
            d = (p["gap"] + p["range"]) / 2.0
        return [("place", p["object"], (rx - ux * d, ry - uy * d, rest), None)]
    raise SpecMismatch(f"no objectives for criterion kind {crit.kind!r}")


def _pack(
    objects,
    scripts,
    events,
    probe,
    fixed,
    instruction,
    predicate_id,
    criterion,
    entangled_instruction=None,
):
    return {
        "objects": objects,
        "scripts": tuple(scripts),
        "events": tuple(events),
        "probe_params": probe,
        "fixed_params": fixed,
        "instruction": instruction,
        "predicate_id": predicate_id,
        "criterion": criterion,
        "entangled_instruction": entangled_instruction,
    }
