"""Capability-axis evaluation: run a policy over the task catalog.

One suite run sweeps the selected (family, tier, template) cells, playing
``episodes_per_task`` seeded episodes per cell. The report carries exact
per-template counts, unweighted per-(family, tier) means, and run metadata.
Policy exceptions are captured per episode as failures with a logged cause;
the suite itself never aborts.

Episodes may run across worker threads; since a policy instance is stateful,
``workers > 1`` requires a zero-argument policy factory so every episode gets
its own instance. The report merge is order-independent either way.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import taskgen
from .episode import Episode
from .errors import CatalogMismatch
from .runner import RunConfig, meta_for, rollout

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TemplateResult:
    family: str
    tier: str
    template_id: int
    episodes_run: int
    successes: int
    failures: tuple[str, ...] = ()

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes_run if self.episodes_run else 0.0


@dataclass(frozen=True)
class CapabilityReport:
    results: tuple[TemplateResult, ...]
    policy_id: str
    seed: int
    episodes_per_task: int
    wall_time: float

    def result_for(self, family: str, tier: str, template_id: int) -> TemplateResult:
        for r in self.results:
            if (r.family, r.tier, r.template_id) == (family, tier, template_id):
                return r
        raise CatalogMismatch(f"no result for {family}/{tier}/t{template_id}")

    def family_tier_means(self) -> dict[tuple[str, str], float]:
        cells: dict[tuple[str, str], list[float]] = {}
        for r in self.results:
            cells.setdefault((r.family, r.tier), []).append(r.success_rate)
        return {key: sum(rates) / len(rates) for key, rates in cells.items()}

    def metadata(self) -> dict:
        return {
            "policy_id": self.policy_id,
            "seed": self.seed,
            "episodes_per_task": self.episodes_per_task,
            "wall_time": self.wall_time,
        }

    def to_json(self, include_timing: bool = False) -> dict:
        meta = self.metadata()
        if not include_timing:
            # wall time is the one nondeterministic field; dropping it keeps
            # fixed-seed report files byte-identical across runs
            meta["wall_time"] = None
        return {
            "kind": "capability_report",
            "metadata": meta,
            "templates": [
                {
                    "family": r.family,
                    "tier": r.tier,
                    "template_id": r.template_id,
                    "episodes_run": r.episodes_run,
                    "successes": r.successes,
                    "success_rate": r.success_rate,
                    "failures": list(r.failures),
                }
                for r in self.results
            ],
            "family_tier_means": [
                {"family": f, "tier": t, "mean_success_rate": m}
                for (f, t), m in sorted(self.family_tier_means().items())
            ],
        }


def report_from_json(doc: dict) -> CapabilityReport:
    if doc.get("kind") != "capability_report":
        raise CatalogMismatch(f"not a capability report: kind={doc.get('kind')!r}")
    meta = doc["metadata"]
    results = tuple(
        TemplateResult(
            family=row["family"],
            tier=row["tier"],
            template_id=int(row["template_id"]),
            episodes_run=int(row["episodes_run"]),
            successes=int(row["successes"]),
            failures=tuple(row.get("failures", ())),
        )
        for row in doc["templates"]
    )
    return CapabilityReport(
        results=results,
        policy_id=meta["policy_id"],
        seed=int(meta["seed"]),
        episodes_per_task=int(meta["episodes_per_task"]),
        wall_time=float(meta["wall_time"] or 0.0),
    )


def _check_filter(families, tiers):
    if families is not None:
        unknown = set(families) - set(taskgen.FAMILIES)
        if unknown:
            raise CatalogMismatch(f"unknown families: {sorted(unknown)}")
    if tiers is not None:
        unknown = set(tiers) - set(taskgen.TIERS)
        if unknown:
            raise CatalogMismatch(f"unknown tiers: {sorted(unknown)}")


def run_episode(
    policy,
    family: str,
    tier: str,
    template_id: int,
    seed: int,
    record: bool = False,
    entangled: bool = False,
) -> tuple[int, str | None, Episode | None]:
    """One catalog episode: generate, roll out, judge.

    Returns (success, failure_cause, recorded_episode). A policy exception
    is a failure with success 0, never a raise.
    """
    spec, scene = taskgen.generate_task(family, tier, template_id, seed=seed, entangled=entangled)
    if hasattr(policy, "set_task"):
        policy.set_task(spec)
    config = RunConfig(
        max_steps=taskgen.MAX_STEPS[tier],
        record=record,
        camera_mask=tuple(spec.fixed_params.get("camera_mask", ())),
    )
    tag = "entangled" if entangled else ""
    episode_id = f"{family}-{tier}-t{template_id}-s{seed}" + ("-ent" if entangled else "")
    result = rollout(
        policy, scene, taskgen.criterion_for(spec), spec.instruction,
        config, episode_id=episode_id, task_meta=meta_for(spec, variant_tag=tag),
    )
    if result.failure is not None:
        log.warning("episode %s failed: %s", episode_id, result.failure)
        return 0, result.failure, result.episode
    return taskgen.evaluate_success(spec, result.trajectory), None, result.episode


def _is_factory(policy) -> bool:
    # classes and plain callables are factories; a policy instance is not
    return isinstance(policy, type) or (callable(policy) and not hasattr(policy, "act"))


def _policy_for_episode(policy):
    made = policy() if _is_factory(policy) else policy
    return made, made is not policy


def run_capability_suite(
    policy,
    families=None,
    tiers=None,
    episodes_per_task: int = 50,
    seed: int = 0,
    record: bool = False,
    episode_sink=None,
    workers: int = 1,
) -> CapabilityReport:
    """Sweep the catalog; ``policy`` is an instance or a zero-arg factory.

    Recorded episodes reach ``episode_sink`` in catalog order regardless of
    worker scheduling.
    """
    if episodes_per_task < 1:
        raise ValueError("episodes_per_task must be >= 1")
    _check_filter(families, tiers)
    if workers > 1 and not _is_factory(policy):
        raise ValueError("workers > 1 needs a policy factory, not a shared instance")

    cells = taskgen.list_tasks(families, tiers)
    record = record or episode_sink is not None
    jobs = [
        (family, tier, template_id, seed + i)
        for (family, tier, template_id) in cells
        for i in range(episodes_per_task)
    ]

    seen_ids: list[str] = []

    def run_job(job):
        family, tier, template_id, ep_seed = job
        instance, owned = _policy_for_episode(policy)
        if not seen_ids:
            seen_ids.append(instance.policy_id)
        try:
            return run_episode(instance, family, tier, template_id, ep_seed, record=record)
        finally:
            if owned:
                instance.close()

    t0 = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_job, jobs))
    else:
        outcomes = [run_job(job) for job in jobs]
    wall_time = time.perf_counter() - t0

    by_cell: dict[tuple[str, str, int], list[tuple[int, str | None]]] = {}
    for job, (success, cause, episode) in zip(jobs, outcomes):
        by_cell.setdefault(job[:3], []).append((success, cause))
        if episode_sink is not None and episode is not None:
            episode_sink(episode)

    results = tuple(
        TemplateResult(
            family=family,
            tier=tier,
            template_id=template_id,
            episodes_run=len(rows),
            successes=sum(s for s, _ in rows),
            failures=tuple(c for _, c in rows if c is not None),
        )
        for (family, tier, template_id), rows in
        ((cell, by_cell[cell]) for cell in cells)
    )
    return CapabilityReport(
        results=results,
        policy_id=seen_ids[0] if seen_ids else "unknown",
        seed=seed,
        episodes_per_task=episodes_per_task,
        wall_time=wall_time,
    )


@dataclass(frozen=True)
class IsolationRow:
    family: str
    tier: str
    template_id: int
    episodes_run: int
    isolated_successes: int
    entangled_successes: int

    @property
    def isolated_rate(self) -> float:
        return self.isolated_successes / self.episodes_run if self.episodes_run else 0.0

    @property
    def entangled_rate(self) -> float:
        return self.entangled_successes / self.episodes_run if self.episodes_run else 0.0


@dataclass(frozen=True)
class IsolationReport:
    rows: tuple[IsolationRow, ...]
    policy_id: str
    seed: int
    episodes_per_task: int

    def overall(self) -> tuple[float, float]:
        n = sum(r.episodes_run for r in self.rows)
        if n == 0:
            return 0.0, 0.0
        return (
            sum(r.isolated_successes for r in self.rows) / n,
            sum(r.entangled_successes for r in self.rows) / n,
        )

    def to_json(self) -> dict:
        iso, ent = self.overall()
        return {
            "kind": "isolation_report",
            "metadata": {
                "policy_id": self.policy_id,
                "seed": self.seed,
                "episodes_per_task": self.episodes_per_task,
            },
            "templates": [
                {
                    "family": r.family,
                    "tier": r.tier,
                    "template_id": r.template_id,
                    "episodes_run": r.episodes_run,
                    "isolated_rate": r.isolated_rate,
                    "entangled_rate": r.entangled_rate,
                }
                for r in self.rows
            ],
            "overall": {"isolated_rate": iso, "entangled_rate": ent},
        }


def run_isolation_ablation(
    policy,
    family: str = "Perception",
    tier: str = "Easy",
    episodes_per_task: int = 20,
    seed: int = 0,
) -> IsolationReport:
    """Run each template twice per seed, contact-only then full criterion."""
    _check_filter([family], [tier])
    rows = []
    policy_id = "unknown"
    for (_, _, template_id) in taskgen.list_tasks([family], [tier]):
        iso = ent = 0
        n = 0
        for i in range(episodes_per_task):
            ep_seed = seed + i
            instance, owned = _policy_for_episode(policy)
            policy_id = instance.policy_id
            try:
                s_iso, _, _ = run_episode(instance, family, tier, template_id, ep_seed)
                s_ent, _, _ = run_episode(instance, family, tier, template_id, ep_seed,
                                          entangled=True)
            finally:
                if owned:
                    instance.close()
            iso += s_iso
            ent += s_ent
            n += 1
        rows.append(IsolationRow(
            family=family, tier=tier, template_id=template_id,
            episodes_run=n, isolated_successes=iso, entangled_successes=ent,
        ))
    return IsolationReport(
        rows=tuple(rows),
        policy_id=policy_id,
        seed=seed,
        episodes_per_task=episodes_per_task,
    )
