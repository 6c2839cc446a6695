"""Closed-loop episode execution: observe, act, step, judge.

The runner owns the loop contract: it latches the instruction into the scene,
resets the policy, feeds privileged state through set_scene every step, and
times each act() call with the monotonic clock. Observations are rendered
only when the policy wants them or the episode is being recorded; masked
cameras yield background frames of the right shape instead of disappearing,
so recorded episodes always validate.

Success flags come from a CriterionTracker fed with every post-action state;
a step's flag reflects the state its action produced, and the episode's
final flag is the last step's flag.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

from .episode import CAMERA_IDS, MODALITIES, Action, Episode, Observation, Step, TaskMeta
from .errors import NebulaError
from .simworld import DT, SceneState, render, render_background, step as sim_step
from .taskgen import CriterionTracker, SuccessCriterion, TaskSpec

DEFAULT_IMAGE_SIZE = 64


@dataclass(frozen=True)
class RunConfig:
    max_steps: int = 400
    record: bool = False
    image_width: int = DEFAULT_IMAGE_SIZE
    image_height: int = DEFAULT_IMAGE_SIZE
    camera_mask: tuple[str, ...] = ()
    stop_on_success: bool = True
    keep_trajectory: bool = True


@dataclass
class RolloutResult:
    final_success: int
    steps_taken: int
    trajectory: list[SceneState]
    episode: Episode | None
    act_ns: list[int] = field(default_factory=list)
    obs_ns: list[int] = field(default_factory=list)
    actions: list[Action] = field(default_factory=list)
    failure: str | None = None


def build_observation(scene: SceneState, config: RunConfig) -> Observation:
    views = {}
    for camera_id in CAMERA_IDS:
        source = render_background if camera_id in config.camera_mask else render
        for modality in MODALITIES:
            views[(camera_id, modality)] = source(
                scene, camera_id, modality, config.image_width, config.image_height
            )
    return Observation(
        views=views,
        q=scene.q,
        q_dot=scene.q_dot,
        t=scene.sim_step,
        wall_time=scene.sim_step * DT,
    )


def rollout(
    policy,
    scene: SceneState,
    criterion: SuccessCriterion,
    instruction: str,
    config: RunConfig = RunConfig(),
    episode_id: str = "ep-0",
    task_meta: TaskMeta | None = None,
) -> RolloutResult:
    scene = replace(scene, active_instruction=instruction)
    need_obs = policy.needs_observation or config.record
    tracker = CriterionTracker(criterion)
    flag = tracker.update(scene)

    result = RolloutResult(final_success=0, steps_taken=0, trajectory=[scene], episode=None)
    recorded: list[Step] = []
    try:
        policy.reset(instruction, scene.embodiment)
        for i in range(config.max_steps):
            observation = build_observation(scene, config) if need_obs else None
            policy.set_scene(scene)
            t_obs = time.perf_counter_ns()
            action = policy.act(observation if policy.needs_observation else None)
            t_act = time.perf_counter_ns()
            result.obs_ns.append(t_obs)
            result.act_ns.append(t_act - t_obs)
            result.actions.append(action)

            scene = sim_step(scene, action)
            flag = tracker.update(scene)
            result.steps_taken = i + 1
            if config.keep_trajectory:
                result.trajectory.append(scene)
            if config.record:
                recorded.append(
                    Step(index=i, observation=observation, action=action, success=flag)
                )
            if flag and config.stop_on_success:
                break
    except NebulaError as exc:
        result.failure = f"{type(exc).__name__}: {exc}"
    except Exception as exc:  # policy bugs count as failures, not crashes
        result.failure = f"{type(exc).__name__}: {exc}"

    result.final_success = int(flag) if result.failure is None else 0
    if config.record:
        if not recorded:
            # a valid episode needs at least one step; record an idle frame
            observation = build_observation(scene, config)
            zero = Action(values=tuple(0.0 for _ in range(scene.embodiment.dof + 1)))
            recorded.append(Step(index=0, observation=observation, action=zero, success=result.final_success))
        recorded[-1] = replace(recorded[-1], success=result.final_success)
        result.episode = Episode(
            episode_id=episode_id,
            instruction=instruction,
            embodiment=scene.embodiment,
            task_meta=task_meta,
            steps=tuple(recorded),
            final_success=result.final_success,
        )
    return result


def meta_for(spec: TaskSpec, variant_tag: str = "") -> TaskMeta:
    return TaskMeta(
        family=spec.family,
        tier=spec.tier,
        template_id=spec.template_id,
        seed=spec.seed,
        variant_tag=variant_tag,
    )
