"""Builders for small, valid in-memory episodes shared across test modules."""
from __future__ import annotations

from nebula.episode import (
    CAMERA_IDS,
    MODALITIES,
    MODALITY_STRIDE,
    Action,
    EmbodimentConfig,
    Episode,
    Image,
    Observation,
    Step,
    TaskMeta,
)

DOF = 6


def make_embodiment(dof: int = DOF, robot_id: str = "arm0") -> EmbodimentConfig:
    return EmbodimentConfig(
        robot_id=robot_id,
        dof=dof,
        gripper="parallel_jaw",
        arm_count=1,
        joint_limits=tuple((-3.14, 3.14) for _ in range(dof)),
    )


def make_image(width: int = 2, height: int = 2, modality: str = "rgb", fill: int = 7) -> Image:
    n = width * height * MODALITY_STRIDE[modality]
    return Image(width=width, height=height, modality=modality, data=bytes([fill % 256]) * n)


def make_observation(dof: int = DOF, t: int = 0, width: int = 2, height: int = 2) -> Observation:
    views = {
        (cam, mod): make_image(width, height, mod, fill=t + len(cam))
        for cam in CAMERA_IDS
        for mod in MODALITIES
    }
    return Observation(
        views=views,
        q=tuple(0.1 * j for j in range(dof)),
        q_dot=tuple(0.0 for _ in range(dof)),
        t=t,
        wall_time=0.05 * t,
    )


def make_step(index: int, dof: int = DOF, success: int = 0, action: Action | None = None) -> Step:
    if action is None:
        action = Action(values=tuple(0.0 for _ in range(dof + 1)))
    return Step(index=index, observation=make_observation(dof, t=index), action=action, success=success)


def make_episode(
    n_steps: int = 10,
    dof: int = DOF,
    flags: list[int] | None = None,
    episode_id: str = "ep-0",
    instruction: str = "Pick up the red cube",
    family: str = "Control",
    tier: str = "Easy",
    template_id: int = 0,
    seed: int = 0,
) -> Episode:
    if flags is None:
        flags = [0] * n_steps
    assert len(flags) == n_steps
    emb = make_embodiment(dof)
    steps = tuple(make_step(i, dof, success=flags[i]) for i in range(n_steps))
    return Episode(
        episode_id=episode_id,
        instruction=instruction,
        embodiment=emb,
        task_meta=TaskMeta(family=family, tier=tier, template_id=template_id, seed=seed),
        steps=steps,
        final_success=flags[-1] if flags else 0,
    )
