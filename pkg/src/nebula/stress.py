"""Single-indicator stress probes at pressure levels v1..v3.

Five probe kinds, each isolating one operational quality:

* Frequency  - action rate, measured against scenes whose motion grows from
               slow uniform (v1) through alternating (v2) to fast irregular
               (v3); only act() wall time counts, never stepping or rendering.
* Latency    - per-step delay from observation delivery to action return, on
               a static (v1), moving (v2), or fast-moving (v3) scene.
* Stability  - smoothness of the emitted action sequence, scored on a coarse
               contact task (v1), a grasp-and-lift (v2), or a sub-centimeter
               insertion (v3).
* Adaptability - seeded mid-episode disruption of a simple pick-or-place
               base: v1 displaces the target object, v2 rewrites the
               instruction to a different target, v3 appends a sequential
               "release" command. Success is judged against the post-event
               goal only.
* Resources  - peak resident memory during a short rollout plus the policy's
               on-disk artifact size; accelerator memory is pass-through.

All timing uses the monotonic clock and runs on the calling thread; one
probe executes at a time.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field

import psutil

from . import taskgen
from .episode import Action
from .errors import DimensionMismatch, SpecMismatch, TooShort
from .rng import substream
from .runner import RunConfig, build_observation, rollout
from .simworld import (
    DT,
    Event,
    MotionScript,
    MotionSegment,
    ObjectState,
    Pose,
    inject_event,
    make_scene,
    step as sim_step,
)
from .geom import quat_from_yaw
from .simworld import half_extents

STRESS_KINDS = ("Frequency", "Latency", "Stability", "Adaptability", "Resources")
STRESS_LEVELS = ("v1", "v2", "v3")


@dataclass(frozen=True)
class StressProfile:
    kind: str
    level: str
    steps: int = 200
    warmup: int | None = None
    scenario: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in STRESS_KINDS:
            raise SpecMismatch(f"unknown stress kind {self.kind!r}")
        if self.level not in STRESS_LEVELS:
            raise SpecMismatch(f"unknown stress level {self.level!r}")
        if self.steps < 1:
            raise SpecMismatch("steps must be >= 1")
        if self.warmup is not None and not (0 <= self.warmup < self.steps):
            raise SpecMismatch("warmup must satisfy 0 <= W < K")

    @property
    def warmup_steps(self) -> int:
        # first calls often pay one-time costs; default W is 10% of K
        if self.warmup is not None:
            return self.warmup
        return min(self.steps - 1, max(1, self.steps // 10))


@dataclass(frozen=True)
class MetricRecord:
    kind: str
    level: str
    sample_count: int
    frequency_hz: float | None = None
    latency_ms: dict | None = None
    stability: float | None = None
    adaptability_rate: float | None = None
    resources: dict | None = None
    failure: str | None = None

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "level": self.level,
            "sample_count": self.sample_count,
            "frequency_hz": self.frequency_hz,
            "latency_ms": self.latency_ms,
            "stability": self.stability,
            "adaptability_rate": self.adaptability_rate,
            "resources": self.resources,
            "failure": self.failure,
        }


def metric_from_json(doc: dict) -> MetricRecord:
    return MetricRecord(
        kind=doc["kind"],
        level=doc["level"],
        sample_count=int(doc["sample_count"]),
        frequency_hz=doc.get("frequency_hz"),
        latency_ms=doc.get("latency_ms"),
        stability=doc.get("stability"),
        adaptability_rate=doc.get("adaptability_rate"),
        resources=doc.get("resources"),
        failure=doc.get("failure"),
    )


# ---------------------------------------------------------------------------
# Stability score.


def _values_of(action) -> tuple[float, ...]:
    return action.values if isinstance(action, Action) else tuple(action)


def stability_score(actions) -> float:
    """exp of the negative mean L2 step-to-step difference; 1.0 = constant.

    A sequence of T actions contributes T-1 consecutive differences.
    """
    if len(actions) < 2:
        raise TooShort(f"need at least 2 actions, got {len(actions)}")
    rows = [_values_of(a) for a in actions]
    width = len(rows[0])
    total = 0.0
    for prev, cur in zip(rows, rows[1:]):
        if len(cur) != width or len(prev) != width:
            raise DimensionMismatch("actions differ in dimension")
        total += math.sqrt(sum((b - a) * (b - a) for a, b in zip(prev, cur)))
    return math.exp(-total / (len(rows) - 1))


# ---------------------------------------------------------------------------
# Scenario scenes for the timing probes. Motion only modulates what the
# policy observes; the timers never depend on it.

_MOTION = {
    ("Frequency", "v1"): dict(count=1, speed=0.03, period=120, style="uniform"),
    ("Frequency", "v2"): dict(count=2, speed=0.07, period=40, style="alternating"),
    ("Frequency", "v3"): dict(count=3, speed=0.12, period=20, style="irregular"),
    ("Latency", "v1"): dict(count=2, speed=0.0, period=0, style="static"),
    ("Latency", "v2"): dict(count=2, speed=0.05, period=60, style="alternating"),
    ("Latency", "v3"): dict(count=3, speed=0.12, period=20, style="irregular"),
}

_SCENE_SHAPES = ("sphere", "cube", "cylinder")
_SCENE_COLORS = ("red", "blue", "yellow")


def _unit(rng) -> tuple[float, float]:
    angle = rng.uniform(0.0, 2.0 * math.pi)
    return math.cos(angle), math.sin(angle)


def _patrol(object_id, start, rng, speed, period, style, horizon) -> MotionScript:
    hx, hy = _unit(rng)
    segments = []
    x, y = start[0], start[1]
    from_step = 0
    while from_step <= horizon:
        if style == "irregular":
            hx, hy = _unit(rng)
            pace = speed * rng.uniform(0.75, 1.25)
        else:
            pace = speed
        # reflect headings that would leave the desk
        nx = x + hx * pace * period * DT
        ny = y + hy * pace * period * DT
        if abs(nx) > 0.32:
            hx = -hx
            nx = x + hx * pace * period * DT
        if abs(ny) > 0.32:
            hy = -hy
            ny = y + hy * pace * period * DT
        segments.append(MotionSegment(
            from_step=from_step,
            anchor=(x, y, start[2]),
            velocity=(hx * pace, hy * pace, 0.0),
        ))
        x, y = nx, ny
        from_step += period
        if style != "irregular":
            hx, hy = -hx, -hy  # patrol back and forth at constant speed
    return MotionScript(object_id=object_id, segments=tuple(segments))


def stress_scene(kind: str, level: str, seed: int = 0, horizon: int = 4000):
    """Desk scene whose motion matches the probe's pressure level."""
    try:
        motion = _MOTION[(kind, level)]
    except KeyError:
        raise SpecMismatch(f"no scenario scene for {kind}/{level}") from None
    rng = substream(seed, "stress", kind, level)
    objects, scripts = [], []
    taken: list[tuple[float, float]] = []
    for i in range(motion["count"]):
        for _ in range(100):
            x, y = rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)
            if all(math.hypot(x - tx, y - ty) >= 0.14 for tx, ty in taken):
                break
        taken.append((x, y))
        shape = _SCENE_SHAPES[i % len(_SCENE_SHAPES)]
        size = 0.04
        hz = half_extents(shape, size)[2]
        objects.append(ObjectState(
            id=i + 1,
            shape=shape,
            color=taskgen.COLORS[_SCENE_COLORS[i % len(_SCENE_COLORS)]],
            size=size,
            pose=Pose(position=(x, y, hz), orientation=quat_from_yaw(0.0)),
        ))
        if motion["speed"] > 0.0:
            scripts.append(_patrol(
                i + 1, (x, y, hz), rng, motion["speed"], motion["period"],
                motion["style"], horizon,
            ))
    scene_id = f"stress-{kind}-{level}-s{seed}"
    return make_scene(scene_id, taskgen.DESK_ARM, tuple(objects), taskgen.HOME_Q, tuple(scripts))


def _phantom_criterion(scene) -> taskgen.SuccessCriterion:
    # impossible goal below the desk so the tracker never fires during probes
    return taskgen.SuccessCriterion(
        predicate_id="stress.phantom",
        kind="at_goal_pose",
        tolerance=1e-6,
        hold_steps=1,
        params={"targets": [{"object": scene.objects[0].id,
                             "goal": {"position": [0.0, 0.0, -1.0]}}]},
    )


def _timed_probe(policy, profile: StressProfile, seed: int):
    scene = stress_scene(profile.kind, profile.level, seed, horizon=profile.steps + 10)
    config = RunConfig(max_steps=profile.steps, stop_on_success=False, keep_trajectory=False)
    return rollout(policy, scene, _phantom_criterion(scene), "", config)


def _p95(values) -> float:
    ordered = sorted(values)
    rank = max(0, math.ceil(0.95 * len(ordered)) - 1)
    return ordered[rank]


def measure_inference_frequency(policy, profile: StressProfile, seed: int = 0) -> MetricRecord:
    """(K - W) actions divided by their summed act() wall time."""
    if profile.kind != "Frequency":
        raise SpecMismatch(f"profile kind {profile.kind!r} is not Frequency")
    result = _timed_probe(policy, profile, seed)
    samples = result.act_ns[profile.warmup_steps:]
    if result.failure is not None or not samples:
        return MetricRecord(kind="Frequency", level=profile.level, sample_count=0,
                            failure=result.failure or "no samples after warmup")
    total_s = sum(samples) / 1e9
    return MetricRecord(
        kind="Frequency",
        level=profile.level,
        sample_count=len(samples),
        frequency_hz=len(samples) / total_s if total_s > 0 else float("inf"),
    )


def measure_latency(policy, profile: StressProfile, seed: int = 0) -> MetricRecord:
    """Observation-delivered to action-returned, mean and p95 in ms."""
    if profile.kind != "Latency":
        raise SpecMismatch(f"profile kind {profile.kind!r} is not Latency")
    result = _timed_probe(policy, profile, seed)
    samples = [ns / 1e6 for ns in result.act_ns[profile.warmup_steps:]]
    if result.failure is not None or not samples:
        return MetricRecord(kind="Latency", level=profile.level, sample_count=0,
                            failure=result.failure or "no samples after warmup")
    return MetricRecord(
        kind="Latency",
        level=profile.level,
        sample_count=len(samples),
        latency_ms={"mean": statistics.fmean(samples), "p95": _p95(samples)},
    )


# ---------------------------------------------------------------------------
# Stability probe: run the level's precision regime, score the action tape.

_STABILITY_TASKS = {
    "v1": ("Perception", "Easy", 1),
    "v2": ("Control", "Easy", 1),
    "v3": ("Control", "Hard", 2),
}


def measure_stability(policy, profile: StressProfile, seed: int = 0) -> MetricRecord:
    if profile.kind != "Stability":
        raise SpecMismatch(f"profile kind {profile.kind!r} is not Stability")
    family, tier, template_id = profile.scenario.get(
        "task", _STABILITY_TASKS[profile.level])
    spec, scene = taskgen.generate_task(family, tier, template_id, seed=seed)
    if hasattr(policy, "set_task"):
        policy.set_task(spec)
    config = RunConfig(max_steps=min(profile.steps, taskgen.MAX_STEPS[tier]))
    result = rollout(policy, scene, taskgen.criterion_for(spec), spec.instruction, config)
    if result.failure is not None:
        return MetricRecord(kind="Stability", level=profile.level, sample_count=0,
                            failure=result.failure)
    if len(result.actions) < 2:
        return MetricRecord(kind="Stability", level=profile.level,
                            sample_count=len(result.actions), failure="too few actions")
    return MetricRecord(
        kind="Stability",
        level=profile.level,
        sample_count=len(result.actions),
        stability=stability_score(result.actions),
    )


# ---------------------------------------------------------------------------
# Adaptability: seeded mid-episode disruption, judged post-event.


def _free_xy(rng, avoid, min_dist, tries=200):
    for _ in range(tries):
        x = rng.uniform(-0.28, 0.28)
        y = rng.uniform(-0.28, 0.28)
        if all(math.hypot(x - ax, y - ay) >= min_dist for ax, ay in avoid):
            return x, y
    return 0.3, 0.3


def _cube(obj_id, color_name, xy, size=0.04):
    hz = half_extents("cube", size)[2]
    return ObjectState(
        id=obj_id,
        shape="cube",
        color=taskgen.COLORS[color_name],
        size=size,
        pose=Pose(position=(xy[0], xy[1], hz), orientation=quat_from_yaw(0.0)),
    )


def _setup_v1(seed):
    # place-on-marker base; the manipuland teleports mid-approach
    spec, scene = taskgen.generate_task("Control", "Easy", 2, seed=seed)
    rng = substream(seed, "stress", "adapt", "v1")
    fire = 10 + rng.randrange(9)
    cube = next(o for o in scene.objects if o.shape == "cube")
    marker = next(o for o in scene.objects if o.shape == "switch")
    avoid = [cube.pose.position[:2], marker.pose.position[:2]]
    x, y = _free_xy(rng, avoid, min_dist=0.15)
    scene = inject_event(scene, Event(
        fire_step=fire,
        kind="displace_object",
        payload={"object_id": cube.id, "position": (x, y, cube.half[2])},
    ))

    def judge(trajectory):
        return taskgen.evaluate_success(spec, trajectory)

    return scene, spec, spec.instruction, judge


def _setup_v2(seed):
    # instruction swap to the other cube; only post-event states count
    rng = substream(seed, "stress", "adapt", "v2")
    taken: list[tuple[float, float]] = []
    blue_xy = _free_xy(rng, taken, min_dist=0.0)
    taken.append(blue_xy)
    green_xy = _free_xy(rng, taken, min_dist=0.16)
    scene = make_scene(
        f"stress-Adaptability-v2-s{seed}",
        taskgen.DESK_ARM,
        (_cube(1, "blue", blue_xy), _cube(2, "green", green_xy)),
        taskgen.HOME_Q,
    )
    fire = 15 + rng.randrange(16)
    scene = inject_event(scene, Event(
        fire_step=fire,
        kind="swap_instruction",
        payload={"instruction": "Pick up the green cube."},
    ))
    criterion = taskgen.SuccessCriterion(
        predicate_id="stress.adapt.v2",
        kind="relation_satisfied",
        tolerance=taskgen.POSITION_TOLERANCE["Easy"],
        hold_steps=taskgen.HOLD_STEPS,
        params={"relation": "held_above", "object": 2, "min_z": 0.10},
    )

    def judge(trajectory):
        tracker = taskgen.CriterionTracker(criterion)
        flag = 0
        for state in trajectory[fire + 1:]:
            flag = tracker.update(state)
        return flag

    return scene, None, "Pick up the blue cube.", judge


def _setup_v3(seed):
    # sequential command lands after the pickup is already held
    rng = substream(seed, "stress", "adapt", "v3")
    xy = _free_xy(rng, [], min_dist=0.0)
    scene = make_scene(
        f"stress-Adaptability-v3-s{seed}",
        taskgen.DESK_ARM,
        (_cube(1, "gray", xy),),
        taskgen.HOME_Q,
    )
    fire = 40 + rng.randrange(21)
    scene = inject_event(scene, Event(
        fire_step=fire,
        kind="sequential_instruction",
        payload={"instruction": "Release the cube."},
    ))

    def judge(trajectory):
        # both legs in order: the cube was held at some point, and by the end
        # it rests free on the desk again
        lifted = any(s.object_by_id(1).attached_to is not None for s in trajectory)
        final = trajectory[-1].object_by_id(1)
        return int(lifted and final.attached_to is None and final.bottom_z <= 0.02)

    return scene, None, "Pick up the cube.", judge


_ADAPT_SETUPS = {"v1": _setup_v1, "v2": _setup_v2, "v3": _setup_v3}
ADAPT_MAX_STEPS = 240


def run_adaptability(policy, level: str, episodes: int = 20, seed: int = 0) -> MetricRecord:
    """Success rate over seeded disrupted episodes.

    v1 works with both criterion-driven and instruction-driven policies; v2
    and v3 change the instruction mid-episode, so the policy must follow
    scene.active_instruction to stand a chance.
    """
    if level not in _ADAPT_SETUPS:
        raise SpecMismatch(f"unknown stress level {level!r}")
    if episodes < 1:
        raise SpecMismatch("episodes must be >= 1")
    successes = 0
    for i in range(episodes):
        scene, spec, instruction, judge = _ADAPT_SETUPS[level](seed + i)
        if spec is not None and hasattr(policy, "set_task"):
            policy.set_task(spec)
        criterion = _phantom_criterion(scene)
        config = RunConfig(max_steps=ADAPT_MAX_STEPS, stop_on_success=False)
        result = rollout(policy, scene, criterion, instruction, config)
        if result.failure is None:
            successes += judge(result.trajectory)
    return MetricRecord(
        kind="Adaptability",
        level=level,
        sample_count=episodes,
        adaptability_rate=successes / episodes,
    )


# ---------------------------------------------------------------------------
# Resources.


def profile_resources(policy, profile: StressProfile | None = None, seed: int = 0) -> MetricRecord:
    """Peak resident memory over a short rollout, plus artifact size.

    artifact_bytes and accelerator_mem_bytes are read off the policy when it
    exposes them (bridge policies report their remote side); a plain
    in-process policy has no artifact, so 0 and null.
    """
    if profile is None:
        profile = StressProfile(kind="Resources", level="v1", steps=100)
    if profile.kind != "Resources":
        raise SpecMismatch(f"profile kind {profile.kind!r} is not Resources")
    scene = stress_scene("Frequency", "v1", seed, horizon=profile.steps + 10)
    config = RunConfig(max_steps=profile.steps)
    proc = psutil.Process()
    policy.reset("", scene.embodiment)
    peak = proc.memory_info().rss
    for _ in range(profile.steps):
        observation = build_observation(scene, config) if policy.needs_observation else None
        policy.set_scene(scene)
        action = policy.act(observation)
        scene = sim_step(scene, action)
        peak = max(peak, proc.memory_info().rss)
    return MetricRecord(
        kind="Resources",
        level=profile.level,
        sample_count=profile.steps,
        resources={
            "peak_process_mem_bytes": peak,
            "policy_artifact_bytes": int(getattr(policy, "artifact_bytes", 0)),
            "accelerator_mem_bytes": getattr(policy, "accelerator_mem_bytes", None),
        },
    )


def run_probe(policy, profile: StressProfile, seed: int = 0, episodes: int = 20) -> MetricRecord:
    """Dispatch a profile to its measurement routine."""
    if profile.kind == "Frequency":
        return measure_inference_frequency(policy, profile, seed)
    if profile.kind == "Latency":
        return measure_latency(policy, profile, seed)
    if profile.kind == "Stability":
        return measure_stability(policy, profile, seed)
    if profile.kind == "Adaptability":
        return run_adaptability(policy, profile.level, episodes=episodes, seed=seed)
    return profile_resources(policy, profile, seed)
