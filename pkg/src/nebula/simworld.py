"""Deterministic desk-scale kinematic tabletop simulator.

The world is a table plane at z = 0 with rigid objects and one free-flying
gripper driven through a trivial kinematic chain: joints 0-2 are the tool tip
position in meters, joints 3-5 its roll/pitch/yaw, any further joints are
redundant and ignored by forward kinematics. There are no contact dynamics:
grasping is proximity plus a closed aperture, released objects stay where they
are, and the only collision rule is that nothing sinks below the table.

Everything is a pure function of its inputs; stepping the same scene with the
same actions reproduces bit-identical states.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .episode import CAMERA_IDS, MODALITIES, Action, EmbodimentConfig, Image
from .errors import DimensionMismatch, InvalidEvent, UnknownCamera
from .geom import (
    IDENTITY_QUAT,
    Quat,
    Vec3,
    box_sdf,
    quat_conj,
    quat_from_rpy,
    quat_mul,
    quat_normalize,
    quat_rotate,
    vec_add,
    vec_dist,
    vec_norm,
    vec_scale,
    vec_sub,
    yaw_of,
)

DT = 0.05  # seconds per sim step (20 Hz)
MAX_JOINT_DELTA = 0.05  # per-step joint change at |action| = 1 (meters or radians)
GRASP_RADIUS = 0.01  # tip-to-surface distance that allows attachment (meters)
APERTURE_CLOSED = 0.5  # below this the jaw counts as closed

SHAPES = ("cube", "sphere", "cylinder", "peg", "container", "switch")
GRASPABLE_SHAPES = frozenset({"cube", "sphere", "cylinder", "peg"})
GRIPPER_ID = "gripper"
GRIPPER_SEG_ID = 0xFFFF

# workspace bounds (meters); cameras are placed just outside them
TABLE_MIN = -0.5
TABLE_MAX = 0.5
WORK_HEIGHT = 1.0
SIDE_CAMERA_OFFSET = 0.8
WRIST_CAMERA_LIFT = 0.15
WRIST_HALF_WIDTH = 0.12


def half_extents(shape: str, size: float) -> Vec3:
    """Bounding half-extents; size is the characteristic edge/diameter."""
    if shape == "peg":
        return (size / 6.0, size / 6.0, size / 2.0)
    if shape == "container":
        return (size / 2.0, size / 2.0, size / 6.0)
    if shape == "switch":
        return (size / 2.0, size / 2.0, size / 10.0)
    return (size / 2.0, size / 2.0, size / 2.0)


@dataclass(frozen=True)
class Pose:
    position: Vec3
    orientation: Quat = IDENTITY_QUAT

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(
            self, "orientation", quat_normalize(tuple(float(v) for v in self.orientation))
        )


@dataclass(frozen=True)
class ObjectState:
    id: int
    shape: str
    color: tuple[int, int, int]
    size: float
    pose: Pose
    attached_to: str | None = None
    grasp_rel: Pose | None = None  # pose in the gripper frame while attached

    def __post_init__(self):
        object.__setattr__(self, "color", tuple(int(c) for c in self.color))

    @property
    def half(self) -> Vec3:
        return half_extents(self.shape, self.size)

    @property
    def top_z(self) -> float:
        return self.pose.position[2] + self.half[2]

    @property
    def bottom_z(self) -> float:
        return self.pose.position[2] - self.half[2]


@dataclass(frozen=True)
class MotionSegment:
    from_step: int
    anchor: Vec3  # position at from_step, the analytic reference point
    velocity: Vec3  # meters per second


@dataclass(frozen=True)
class MotionScript:
    object_id: int
    segments: tuple[MotionSegment, ...]

    def position_at(self, sim_step: int, dt: float) -> Vec3:
        seg = self.segments[0]
        for candidate in self.segments:
            if candidate.from_step <= sim_step:
                seg = candidate
            else:
                break
        elapsed = (sim_step - seg.from_step) * dt
        return vec_add(seg.anchor, vec_scale(seg.velocity, elapsed))


EVENT_KINDS = ("displace_object", "swap_instruction", "sequential_instruction", "attribute_switch")


@dataclass(frozen=True)
class Event:
    fire_step: int
    kind: str
    payload: dict


@dataclass(frozen=True)
class GripperState:
    pose: Pose
    aperture: float  # 1.0 fully open, 0.0 fully closed


@dataclass(frozen=True)
class SceneState:
    scene_id: str
    embodiment: EmbodimentConfig
    sim_step: int
    q: tuple[float, ...]
    q_dot: tuple[float, ...]
    gripper: GripperState
    objects: tuple[ObjectState, ...]
    motion_scripts: tuple[MotionScript, ...] = ()
    event_queue: tuple[Event, ...] = ()
    active_instruction: str = ""
    instruction_history: tuple[str, ...] = ()

    def object_by_id(self, object_id: int) -> ObjectState:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise KeyError(f"no object with id {object_id}")

    def attached_object(self) -> ObjectState | None:
        for obj in self.objects:
            if obj.attached_to is not None:
                return obj
        return None


def fk(q: tuple[float, ...]) -> Pose:
    """Tool pose from joint positions: first three joints translate, next three rotate."""
    pos = (
        q[0] if len(q) > 0 else 0.0,
        q[1] if len(q) > 1 else 0.0,
        q[2] if len(q) > 2 else 0.0,
    )
    rpy = (
        q[3] if len(q) > 3 else 0.0,
        q[4] if len(q) > 4 else 0.0,
        q[5] if len(q) > 5 else 0.0,
    )
    return Pose(position=pos, orientation=quat_from_rpy(*rpy))


def make_scene(
    scene_id: str,
    embodiment: EmbodimentConfig,
    objects: tuple[ObjectState, ...],
    q: tuple[float, ...],
    motion_scripts: tuple[MotionScript, ...] = (),
    aperture: float = 0.5,
) -> SceneState:
    # default aperture 0.5 is the zero-command fixed point: stepping with an
    # all-zero action then changes nothing but sim_step
    q = tuple(float(v) for v in q)
    return SceneState(
        scene_id=scene_id,
        embodiment=embodiment,
        sim_step=0,
        q=q,
        q_dot=tuple(0.0 for _ in q),
        gripper=GripperState(pose=fk(q), aperture=aperture),
        objects=tuple(objects),
        motion_scripts=tuple(motion_scripts),
    )


def signed_distance(point: Vec3, obj: ObjectState) -> float:
    """Distance from a point to the object surface; negative inside."""
    local = quat_rotate(quat_conj(obj.pose.orientation), vec_sub(point, obj.pose.position))
    if obj.shape == "sphere":
        return vec_norm(local) - obj.size / 2.0
    return box_sdf(local, obj.half)


def tip_position(scene: SceneState) -> Vec3:
    return scene.gripper.pose.position


def scripted_lead(scene: SceneState, object_id: int, dt: float = DT) -> Vec3:
    """Displacement a scripted object will make over the next step, (0,0,0)
    for everything else. Lets a controller aim where the object will be."""
    for script in scene.motion_scripts:
        if script.object_id == object_id and scene.object_by_id(object_id).attached_to is None:
            cur = script.position_at(scene.sim_step, dt)
            nxt = script.position_at(scene.sim_step + 1, dt)
            return vec_sub(nxt, cur)
    return (0.0, 0.0, 0.0)


def _clamp_to_table(obj: ObjectState) -> ObjectState:
    hz = obj.half[2]
    x, y, z = obj.pose.position
    if z < hz:
        return replace(obj, pose=replace(obj.pose, position=(x, y, hz)))
    return obj


def _derived_pose(gripper_pose: Pose, rel: Pose) -> Pose:
    pos = vec_add(gripper_pose.position, quat_rotate(gripper_pose.orientation, rel.position))
    return Pose(position=pos, orientation=quat_mul(gripper_pose.orientation, rel.orientation))


def inject_event(scene: SceneState, event: Event) -> SceneState:
    if event.kind not in EVENT_KINDS:
        raise InvalidEvent(f"unknown event kind {event.kind!r}")
    if event.fire_step < scene.sim_step:
        raise InvalidEvent(f"fire_step {event.fire_step} is before sim_step {scene.sim_step}")
    if event.kind == "displace_object":
        if "object_id" not in event.payload or "position" not in event.payload:
            raise InvalidEvent("displace_object needs object_id and position")
        scene.object_by_id(event.payload["object_id"])
    elif event.kind in ("swap_instruction", "sequential_instruction"):
        if "instruction" not in event.payload:
            raise InvalidEvent(f"{event.kind} needs an instruction")
    elif event.kind == "attribute_switch":
        if "object_id" not in event.payload or "color" not in event.payload:
            raise InvalidEvent("attribute_switch needs object_id and color")
        scene.object_by_id(event.payload["object_id"])
    return replace(scene, event_queue=scene.event_queue + (event,))


def _apply_event(scene: SceneState, event: Event) -> SceneState:
    objects = list(scene.objects)
    if event.kind == "displace_object":
        target_id = event.payload["object_id"]
        new_pos = tuple(float(v) for v in event.payload["position"])
        scripts = []
        for script in scene.motion_scripts:
            if script.object_id == target_id:
                # re-anchor so scripted motion continues from the new position
                seg = MotionSegment(from_step=scene.sim_step, anchor=new_pos, velocity=script.segments[-1].velocity)
                scripts.append(MotionScript(object_id=target_id, segments=(seg,)))
            else:
                scripts.append(script)
        for i, obj in enumerate(objects):
            if obj.id == target_id:
                objects[i] = _clamp_to_table(
                    replace(obj, pose=replace(obj.pose, position=new_pos), attached_to=None, grasp_rel=None)
                )
        return replace(scene, objects=tuple(objects), motion_scripts=tuple(scripts))
    if event.kind in ("swap_instruction", "sequential_instruction"):
        text = event.payload["instruction"]
        return replace(
            scene,
            active_instruction=text,
            instruction_history=scene.instruction_history + (text,),
        )
    if event.kind == "attribute_switch":
        target_id = event.payload["object_id"]
        color = tuple(int(c) for c in event.payload["color"])
        for i, obj in enumerate(objects):
            if obj.id == target_id:
                objects[i] = replace(obj, color=color)
        return replace(scene, objects=tuple(objects))
    raise InvalidEvent(f"unknown event kind {event.kind!r}")


def step(scene: SceneState, action: Action, dt: float = DT) -> SceneState:
    dof = scene.embodiment.dof
    if len(action.values) != dof + 1:
        raise DimensionMismatch(
            f"action has {len(action.values)} values, embodiment wants {dof + 1}"
        )
    new_step = scene.sim_step + 1

    old_q = scene.q
    new_q = []
    for j in range(dof):
        v = old_q[j] + action.values[j] * MAX_JOINT_DELTA
        lo, hi = scene.embodiment.joint_limits[j]
        new_q.append(min(hi, max(lo, v)))
    gripper_pose = fk(tuple(new_q))

    cmd = action.values[dof]
    new_aperture = min(1.0, max(0.0, (1.0 - cmd) / 2.0))
    was_closed = scene.gripper.aperture < APERTURE_CLOSED
    now_closed = new_aperture < APERTURE_CLOSED

    # scripted motion: unattached scripted objects follow their analytic paths
    objects = list(scene.objects)
    by_id = {obj.id: i for i, obj in enumerate(objects)}
    for script in scene.motion_scripts:
        i = by_id[script.object_id]
        if objects[i].attached_to is None:
            pos = script.position_at(new_step, dt)
            objects[i] = replace(objects[i], pose=replace(objects[i].pose, position=pos))

    scene_mid = replace(scene, sim_step=new_step, objects=tuple(objects))

    # due events fire in injection order
    pending = []
    for event in scene_mid.event_queue:
        if event.fire_step <= new_step:
            scene_mid = _apply_event(scene_mid, event)
        else:
            pending.append(event)
    objects = list(scene_mid.objects)

    # attachment state machine on aperture edges
    if not was_closed and now_closed:
        if not any(obj.attached_to is not None for obj in objects):
            tip = gripper_pose.position
            best = None
            best_d = GRASP_RADIUS
            for i, obj in enumerate(objects):
                if obj.shape not in GRASPABLE_SHAPES:
                    continue
                d = signed_distance(tip, obj)
                if d <= best_d:
                    best, best_d = i, d
            if best is not None:
                obj = objects[best]
                inv = quat_conj(gripper_pose.orientation)
                rel = Pose(
                    position=quat_rotate(inv, vec_sub(obj.pose.position, gripper_pose.position)),
                    orientation=quat_mul(inv, obj.pose.orientation),
                )
                objects[best] = replace(obj, attached_to=GRIPPER_ID, grasp_rel=rel)
    elif was_closed and not now_closed:
        for i, obj in enumerate(objects):
            if obj.attached_to is not None:
                objects[i] = replace(obj, attached_to=None, grasp_rel=None)

    # attached object follows rigidly; the table can push the pair upward
    for i, obj in enumerate(objects):
        if obj.attached_to is not None:
            derived = _derived_pose(gripper_pose, obj.grasp_rel)
            deficit = obj.half[2] - derived.position[2]
            if deficit > 0.0:
                gx, gy, gz = gripper_pose.position
                gripper_pose = replace(gripper_pose, position=(gx, gy, gz + deficit))
                new_q[2] = new_q[2] + deficit
                derived = _derived_pose(gripper_pose, obj.grasp_rel)
            objects[i] = replace(obj, pose=derived)
        else:
            objects[i] = _clamp_to_table(objects[i])

    new_q = tuple(new_q)
    q_dot = tuple((new_q[j] - old_q[j]) / dt for j in range(dof))
    return replace(
        scene_mid,
        q=new_q,
        q_dot=q_dot,
        gripper=GripperState(pose=gripper_pose, aperture=new_aperture),
        objects=tuple(objects),
        event_queue=tuple(pending),
    )


# ---------------------------------------------------------------------------
# Rendering: orthographic flat-color rasteriser over object bounding boxes.
#
# Cameras (all orthographic):
#   top    looks straight down from z = WORK_HEIGHT over the whole table
#   front  looks along +y from y = -SIDE_CAMERA_OFFSET
#   back   looks along -y from y = +SIDE_CAMERA_OFFSET
#   left   looks along +x from x = -SIDE_CAMERA_OFFSET
#   right  looks along -x from x = +SIDE_CAMERA_OFFSET
#   wrist  looks straight down from WRIST_CAMERA_LIFT above the tool tip,
#          window half-width WRIST_HALF_WIDTH
#
# Objects raster as the axis-aligned screen box of their yawed footprint with
# a flat near-face depth; nearest depth wins per pixel. Background pixels get
# id 0, color (0, 0, 0), and the distance to the table (downward views) or to
# the far workspace wall (side views).

BACKGROUND_RGB = (0, 0, 0)
_SIDE_FAR_DEPTH = 2.0 * SIDE_CAMERA_OFFSET


def _footprint_half(obj: ObjectState) -> tuple[float, float]:
    hx, hy, _ = obj.half
    yaw = yaw_of(obj.pose.orientation)
    c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
    return (hx * c + hy * s, hx * s + hy * c)


def _boxes_for_camera(scene: SceneState, camera_id: str):
    """Yield (u0, u1, v0, v1, depth, seg_id, color) per drawable, in world units.

    u/v are the camera plane axes with u0 < u1, v0 < v1; depth is distance
    from the camera plane to the nearest face.
    """
    tip = tip_position(scene)
    entries = []
    bodies = [(obj, *_footprint_half(obj)) for obj in scene.objects]
    marker = 0.015  # gripper tip marker half-width
    if camera_id in ("top", "wrist"):
        if camera_id == "top":
            cam_z = WORK_HEIGHT
        else:
            cam_z = tip[2] + WRIST_CAMERA_LIFT
        for obj, fx, fy in bodies:
            x, y, z = obj.pose.position
            entries.append((x - fx, x + fx, y - fy, y + fy, cam_z - (z + obj.half[2]), obj.id, obj.color))
        entries.append((tip[0] - marker, tip[0] + marker, tip[1] - marker, tip[1] + marker, cam_z - tip[2], GRIPPER_SEG_ID, (255, 255, 255)))
    elif camera_id == "front":
        for obj, fx, fy in bodies:
            x, y, z = obj.pose.position
            entries.append((x - fx, x + fx, z - obj.half[2], z + obj.half[2], (y - fy) + SIDE_CAMERA_OFFSET, obj.id, obj.color))
        entries.append((tip[0] - marker, tip[0] + marker, tip[2] - marker, tip[2] + marker, tip[1] + SIDE_CAMERA_OFFSET, GRIPPER_SEG_ID, (255, 255, 255)))
    elif camera_id == "back":
        for obj, fx, fy in bodies:
            x, y, z = obj.pose.position
            entries.append((-x - fx, -x + fx, z - obj.half[2], z + obj.half[2], SIDE_CAMERA_OFFSET - (y + fy), obj.id, obj.color))
        entries.append((-tip[0] - marker, -tip[0] + marker, tip[2] - marker, tip[2] + marker, SIDE_CAMERA_OFFSET - tip[1], GRIPPER_SEG_ID, (255, 255, 255)))
    elif camera_id == "left":
        for obj, fx, fy in bodies:
            x, y, z = obj.pose.position
            entries.append((y - fy, y + fy, z - obj.half[2], z + obj.half[2], (x - fx) + SIDE_CAMERA_OFFSET, obj.id, obj.color))
        entries.append((tip[1] - marker, tip[1] + marker, tip[2] - marker, tip[2] + marker, tip[0] + SIDE_CAMERA_OFFSET, GRIPPER_SEG_ID, (255, 255, 255)))
    elif camera_id == "right":
        for obj, fx, fy in bodies:
            x, y, z = obj.pose.position
            entries.append((-y - fy, -y + fy, z - obj.half[2], z + obj.half[2], SIDE_CAMERA_OFFSET - (x + fx), obj.id, obj.color))
        entries.append((-tip[1] - marker, -tip[1] + marker, tip[2] - marker, tip[2] + marker, SIDE_CAMERA_OFFSET - tip[0], GRIPPER_SEG_ID, (255, 255, 255)))
    else:
        raise UnknownCamera(camera_id)
    return entries


def _camera_window(scene: SceneState, camera_id: str):
    """(u_min, u_max, v_min, v_max, background_depth) of the camera window."""
    if camera_id == "top":
        return (TABLE_MIN, TABLE_MAX, TABLE_MIN, TABLE_MAX, WORK_HEIGHT)
    if camera_id == "wrist":
        tx, ty, tz = tip_position(scene)
        w = WRIST_HALF_WIDTH
        return (tx - w, tx + w, ty - w, ty + w, tz + WRIST_CAMERA_LIFT)
    if camera_id in ("front", "back", "left", "right"):
        return (TABLE_MIN, TABLE_MAX, 0.0, WORK_HEIGHT, _SIDE_FAR_DEPTH)
    raise UnknownCamera(camera_id)


def render(
    scene: SceneState, camera_id: str, modality: str, width: int = 64, height: int = 64
) -> Image:
    if camera_id not in CAMERA_IDS:
        raise UnknownCamera(camera_id)
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}")
    u_min, u_max, v_min, v_max, bg_depth = _camera_window(scene, camera_id)
    px_u = (u_max - u_min) / width
    px_v = (v_max - v_min) / height

    depth_buf = np.full((height, width), bg_depth, dtype="<f4")
    seg_buf = np.zeros((height, width), dtype="<u2")
    rgb_buf = np.zeros((height, width, 3), dtype=np.uint8)
    rgb_buf[:, :] = BACKGROUND_RGB

    for u0, u1, v0, v1, depth, seg_id, color in _boxes_for_camera(scene, camera_id):
        if depth < 0.0:
            continue  # behind the camera plane (e.g. above the wrist camera)
        c0 = max(0, math.ceil((u0 - u_min) / px_u - 0.5))
        c1 = min(width - 1, math.floor((u1 - u_min) / px_u - 0.5))
        # rows count downward from the top of the image (v_max)
        r0 = max(0, math.ceil((v_max - v1) / px_v - 0.5))
        r1 = min(height - 1, math.floor((v_max - v0) / px_v - 0.5))
        if c1 < c0 or r1 < r0:
            continue
        window = depth_buf[r0 : r1 + 1, c0 : c1 + 1]
        mask = window > depth
        window[mask] = depth
        seg_buf[r0 : r1 + 1, c0 : c1 + 1][mask] = seg_id
        rgb_buf[r0 : r1 + 1, c0 : c1 + 1][mask] = color

    if modality == "rgb":
        return Image(width=width, height=height, modality="rgb", data=rgb_buf.tobytes())
    if modality == "depth":
        return Image(width=width, height=height, modality="depth", data=depth_buf.tobytes())
    return Image(width=width, height=height, modality="segmentation", data=seg_buf.tobytes())


def render_background(
    scene: SceneState, camera_id: str, modality: str, width: int = 64, height: int = 64
) -> Image:
    """What the camera would see of an empty table; stands in for masked cameras."""
    if camera_id not in CAMERA_IDS:
        raise UnknownCamera(camera_id)
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}")
    bg_depth = _camera_window(scene, camera_id)[4]
    if modality == "rgb":
        buf = np.zeros((height, width, 3), dtype=np.uint8)
        buf[:, :] = BACKGROUND_RGB
    elif modality == "depth":
        buf = np.full((height, width), bg_depth, dtype="<f4")
    else:
        buf = np.zeros((height, width), dtype="<u2")
    return Image(width=width, height=height, modality=modality, data=buf.tobytes())


def scene_to_json(scene: SceneState) -> str:
    doc = {
        "scene_id": scene.scene_id,
        "sim_step": scene.sim_step,
        "active_instruction": scene.active_instruction,
        "instruction_history": list(scene.instruction_history),
        "embodiment": {
            "robot_id": scene.embodiment.robot_id,
            "dof": scene.embodiment.dof,
            "gripper": scene.embodiment.gripper,
        },
        "q": list(scene.q),
        "q_dot": list(scene.q_dot),
        "gripper": {
            "position": list(scene.gripper.pose.position),
            "orientation": list(scene.gripper.pose.orientation),
            "aperture": scene.gripper.aperture,
        },
        "objects": [
            {
                "id": obj.id,
                "shape": obj.shape,
                "color": list(obj.color),
                "size": obj.size,
                "position": list(obj.pose.position),
                "orientation": list(obj.pose.orientation),
                "attached_to": obj.attached_to,
            }
            for obj in scene.objects
        ],
        "pending_events": [
            {"fire_step": e.fire_step, "kind": e.kind, "payload": e.payload}
            for e in scene.event_queue
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)
