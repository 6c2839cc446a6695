"""Command-line front end tying generation, evaluation, querying, and reporting together.

Option precedence, highest first: command-line flag, --config JSON file, the
NEBULA_SEED environment variable (seed only), built-in default. Logs go to
stderr; machine-readable output goes to files under --out, or to stdout when
--out is omitted. Exit codes: 0 success, 1 probe or I/O failure, 2 usage
error (the grammar is printed to stderr).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import capability, query, report, storage, stress, taskgen
from .bridge import BridgePolicy
from .episode import CAMERA_IDS
from .errors import MalformedQuery, NebulaError, SpecMismatch
from .policies import (
    DelayedConstantPolicy,
    FrozenPolicy,
    JitterPolicy,
    RandomPolicy,
    ReachOnlyPolicy,
    ScriptedExpert,
    ZeroPolicy,
)
from .runner import RunConfig, meta_for, rollout

log = logging.getLogger("nebula.cli")

GRAMMAR = """\
usage: nebula <subcommand> [flags]

subcommands:
  gen               materialize scripted-expert episodes into a shard + manifest
                    --out DIR [--family F] [--tier T] [--template K] [--n N]
                    [--seed S] [--policy SEL] [--dataset NAME] [--image-size PX]
                    [--camera-mask CAM,CAM] [--dump-scene]
  run-capability    success-rate sweep over the task catalog
                    --policy SEL [--family F] [--tier T] [--n N] [--seed S]
                    [--workers W] [--record] [--dataset NAME] [--out DIR]
  run-stress        one stress probe
                    --kind frequency|latency|stability|adaptability|resources
                    --level v1|v2|v3 --policy SEL [--steps N] [--episodes N]
                    [--seed S] [--out DIR]
  ablate-isolation  controlled-variable check: isolated vs entangled success
                    --policy SEL [--family F] [--tier T] [--n N] [--seed S]
                    [--out DIR]
  query             filter a dataset manifest; episode refs as JSON on stdout
                    DATASET_DIR --query JSON [--dataset NAME]
  split             seeded stratified train/test partition
                    DATASET_DIR [--train-ratio R] [--strata family|family_x_tier]
                    [--seed S] [--holdout-robustness] [--dataset NAME] [--out DIR]
  verify            integrity-scan shards; optionally print per-field checksums
                    DATASET_DIR_OR_SHARD [--field-checksums] [--dataset NAME]
  report            aggregate capability reports into json|csv|radar_json
                    REPORT.json [REPORT.json ...] [--format FMT]
                    [--tier-mask TIER,TIER] [--out DIR]

Every subcommand also accepts --config FILE (JSON supplying any flag; CLI wins).
policy selectors: zero | random[:SEED] | jitter:AMPLITUDE | delay:MS | expert |
                  instructed-expert | reach-only | frozen | bridge:'CMD ARG ...'
seed precedence: --seed, then config file, then NEBULA_SEED, then 0.
exit codes: 0 success, 1 probe or I/O failure, 2 usage error.
"""


class UsageError(Exception):
    """Bad flag combination or value; reported with the grammar, exit 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(GRAMMAR, file=sys.stderr)
        super().error(message)


def _env_seed() -> int:
    raw = os.environ.get("NEBULA_SEED", "")
    try:
        return int(raw) if raw else 0
    except ValueError as exc:
        raise UsageError(f"NEBULA_SEED must be an integer, got {raw!r}") from exc


# ---------------------------------------------------------------------------
# Policy selectors.


def parse_policy(selector: str):
    """'name' or 'name:arg' to a zero-arg factory (workers need fresh instances)."""
    name, _, arg = selector.partition(":")
    try:
        if name == "zero":
            return lambda: ZeroPolicy()
        if name == "random":
            seed = int(arg or 0)
            return lambda: RandomPolicy(seed)
        if name == "jitter":
            amplitude = float(arg)
            return lambda: JitterPolicy(amplitude)
        if name == "delay":
            delay_ms = float(arg)
            return lambda: DelayedConstantPolicy(delay_ms)
        if name == "expert":
            return lambda: ScriptedExpert()
        if name == "instructed-expert":
            return lambda: ScriptedExpert(use_instruction=True)
        if name == "reach-only":
            return lambda: ReachOnlyPolicy()
        if name == "frozen":
            return lambda: FrozenPolicy()
        if name == "bridge":
            argv = shlex.split(arg)
            if not argv:
                raise UsageError("bridge selector needs a command: bridge:'CMD ARG ...'")
            return lambda: BridgePolicy(argv)
    except ValueError as exc:
        raise UsageError(f"bad argument in policy selector {selector!r}: {exc}") from exc
    raise UsageError(f"unknown policy selector {selector!r}")


# ---------------------------------------------------------------------------
# Flag plumbing.

_COMMON = {"config": None}


def _merge_options(ns: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicitly passed flags."""
    opts = {**_COMMON, **defaults}
    given = {k: v for k, v in vars(ns).items() if k != "subcommand"}
    config_path = given.pop("config", None)
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise UsageError(f"config file {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError(f"config file {config_path} must hold a JSON object")
        for key, value in doc.items():
            slot = key.replace("-", "_")
            if slot not in opts:
                raise UsageError(f"config key {key!r} is not a flag of this subcommand")
            opts[slot] = value
    opts.update(given)
    return opts


def _families_arg(opts) -> tuple[str, ...] | None:
    family = opts.get("family")
    if family is None:
        return None
    if family not in taskgen.FAMILIES:
        raise UsageError(f"unknown family {family!r}; choose from {taskgen.FAMILIES}")
    return (family,)


def _tiers_arg(opts) -> tuple[str, ...] | None:
    tier = opts.get("tier")
    if tier is None:
        return None
    if tier not in taskgen.TIERS:
        raise UsageError(f"unknown tier {tier!r}; choose from {taskgen.TIERS}")
    return (tier,)


def _positive(opts, key) -> int:
    value = int(opts[key])
    if value < 1:
        raise UsageError(f"--{key.replace('_', '-')} must be >= 1, got {value}")
    return value


def _out_dir(opts) -> Path | None:
    if not opts.get("out"):
        return None
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(payload: str, out: Path | None, filename: str) -> None:
    if out is None:
        sys.stdout.write(payload)
    else:
        target = out / filename
        target.write_text(payload, encoding="utf-8")
        log.info("wrote %s", target)


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _load_dataset_manifest(directory: Path, dataset: str | None) -> storage.Manifest:
    if dataset:
        return storage.load_manifest(storage.manifest_path(dataset, directory))
    candidates = sorted(directory.glob("*.manifest.json"))
    if len(candidates) != 1:
        raise UsageError(
            f"{directory} holds {len(candidates)} manifests; pick one with --dataset")
    return storage.load_manifest(candidates[0])


def _write_dataset(out: Path, dataset: str, episodes: list) -> None:
    # The manifest stores the bare shard filename so the same flags produce
    # byte-identical artifacts no matter where --out points.
    shard_name = f"{dataset}.shard"
    shard = storage.write_shard(episodes, out / shard_name)
    manifest = storage.build_manifest_from_episodes(
        dataset, [(replace(shard, path=shard_name), episodes)])
    storage.save_manifest(manifest, storage.manifest_path(dataset, out))
    log.info("wrote %d episodes to %s", len(episodes), out / shard_name)


# ---------------------------------------------------------------------------
# Subcommands.


def _scene_doc(scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "robot_id": scene.embodiment.robot_id,
        "instruction": scene.active_instruction,
        "q": list(scene.q),
        "objects": [
            {
                "id": o.id,
                "shape": o.shape,
                "color": list(o.color),
                "size": o.size,
                "position": list(o.pose.position),
                "orientation": list(o.pose.orientation),
            }
            for o in scene.objects
        ],
        "events": [{"fire_step": e.fire_step, "kind": e.kind} for e in scene.event_queue],
    }


def _camera_mask_arg(opts) -> tuple[str, ...]:
    raw = opts.get("camera_mask") or ""
    cameras = tuple(c for c in raw.split(",") if c)
    for camera_id in cameras:
        if camera_id not in CAMERA_IDS:
            raise UsageError(f"unknown camera {camera_id!r}; choose from {CAMERA_IDS}")
    return cameras


def _cmd_gen(opts) -> int:
    out = _out_dir(opts)
    if out is None:
        raise UsageError("gen requires --out DIR")
    n = _positive(opts, "n")
    image_size = _positive(opts, "image_size")
    extra_mask = _camera_mask_arg(opts)
    cells = taskgen.list_tasks(_families_arg(opts), _tiers_arg(opts))
    if opts.get("template") is not None:
        template = int(opts["template"])
        cells = [c for c in cells if c[2] == template]
        if not cells:
            raise UsageError(f"template {template} is not in the catalog")
    policy = parse_policy(opts["policy"])()
    episodes = []
    scenes = {}
    try:
        for family, tier, template_id in cells:
            for i in range(n):
                seed = int(opts["seed"]) + i
                spec, scene = taskgen.generate_task(family, tier, template_id, seed)
                if hasattr(policy, "set_task"):
                    policy.set_task(spec)
                mask = tuple(dict.fromkeys(
                    tuple(spec.fixed_params.get("camera_mask", ())) + extra_mask))
                config = RunConfig(
                    max_steps=taskgen.MAX_STEPS[tier],
                    record=True,
                    image_width=image_size,
                    image_height=image_size,
                    camera_mask=mask,
                )
                episode_id = f"{family}-{tier}-t{template_id}-s{seed}"
                result = rollout(policy, scene, taskgen.criterion_for(spec),
                                 spec.instruction, config,
                                 episode_id=episode_id, task_meta=meta_for(spec))
                if result.failure:
                    log.warning("%s: %s", episode_id, result.failure)
                episodes.append(result.episode)
                if opts.get("dump_scene"):
                    scenes[episode_id] = _scene_doc(scene)
    finally:
        policy.close()
    _write_dataset(out, opts["dataset"], episodes)
    if scenes:
        scene_dir = out / "scenes"
        scene_dir.mkdir(exist_ok=True)
        for episode_id, doc in scenes.items():
            (scene_dir / f"{episode_id}.json").write_text(_dumps(doc), encoding="utf-8")
        log.info("dumped %d scenes to %s", len(scenes), scene_dir)
    return 0


def _cmd_run_capability(opts) -> int:
    out = _out_dir(opts)
    if opts.get("record") and out is None:
        raise UsageError("--record needs --out to hold the episode shard")
    factory = parse_policy(opts["policy"])
    recorded: list = []
    rep = capability.run_capability_suite(
        factory,
        families=_families_arg(opts),
        tiers=_tiers_arg(opts),
        episodes_per_task=_positive(opts, "n"),
        seed=int(opts["seed"]),
        episode_sink=recorded.append if opts.get("record") else None,
        workers=_positive(opts, "workers"),
    )
    _emit(_dumps(rep.to_json()), out, "capability_report.json")
    if opts.get("record"):
        _write_dataset(out, opts["dataset"], recorded)
    return 0


def _cmd_run_stress(opts) -> int:
    kind = str(opts["kind"]).capitalize()
    level = str(opts["level"]).lower()
    if kind not in stress.STRESS_KINDS:
        raise UsageError(f"unknown stress kind {opts['kind']!r}; choose from {stress.STRESS_KINDS}")
    if level not in stress.STRESS_LEVELS:
        raise UsageError(f"unknown stress level {opts['level']!r}; choose from {stress.STRESS_LEVELS}")
    try:
        profile = stress.StressProfile(kind=kind, level=level, steps=_positive(opts, "steps"))
    except SpecMismatch as exc:
        raise UsageError(str(exc)) from exc
    policy = parse_policy(opts["policy"])()
    try:
        record = stress.run_probe(policy, profile, seed=int(opts["seed"]),
                                  episodes=_positive(opts, "episodes"))
    finally:
        policy.close()
    _emit(_dumps(record.to_json()), _out_dir(opts), f"stress_{kind}_{level}.json")
    if record.failure:
        log.error("probe failed: %s", record.failure)
        return 1
    return 0


def _cmd_ablate_isolation(opts) -> int:
    factory = parse_policy(opts["policy"])
    rep = capability.run_isolation_ablation(
        factory,
        family=opts["family"],
        tier=opts["tier"],
        episodes_per_task=_positive(opts, "n"),
        seed=int(opts["seed"]),
    )
    _emit(_dumps(rep.to_json()), _out_dir(opts), "isolation_report.json")
    return 0


def _cmd_query(opts) -> int:
    manifest = _load_dataset_manifest(Path(opts["dataset_dir"]), opts.get("dataset"))
    try:
        expr = query.query_from_json(json.loads(opts["query"]))
        rows = query.filter_episodes(manifest, expr)
    except (ValueError, MalformedQuery) as exc:
        raise UsageError(f"bad --query: {exc}") from exc
    sys.stdout.write(_dumps([asdict(row) for row in rows]))
    return 0


def _cmd_split(opts) -> int:
    manifest = _load_dataset_manifest(Path(opts["dataset_dir"]), opts.get("dataset"))
    try:
        spec = query.SplitSpec(
            train_ratio=float(opts["train_ratio"]),
            strata_key=opts["strata"],
            seed=int(opts["seed"]),
        )
    except MalformedQuery as exc:
        raise UsageError(str(exc)) from exc
    train, test = query.stratified_split(
        manifest, spec, holdout_robustness=bool(opts.get("holdout_robustness")))
    doc = {
        "dataset": manifest.dataset_name,
        "train_ratio": spec.train_ratio,
        "strata": spec.strata_key,
        "seed": spec.seed,
        "holdout_robustness": bool(opts.get("holdout_robustness")),
        "train": [row.episode_id for row in train],
        "test": [row.episode_id for row in test],
    }
    _emit(_dumps(doc), _out_dir(opts), "split.json")
    return 0


def _cmd_verify(opts) -> int:
    target = Path(opts["target"])
    if target.is_dir():
        manifest = _load_dataset_manifest(target, opts.get("dataset"))
        shard_paths = [target / entry.path for entry in manifest.shards]
        expected = {Path(entry.path).name: entry.episode_count for entry in manifest.shards}
    else:
        shard_paths = [target]
        expected = {}
    failed = False
    for path in shard_paths:
        failures = storage.verify_shard(path)
        for failure in failures:
            failed = True
            log.error("%s: %s %s (record %s)", path.name, failure.code,
                      failure.detail, failure.record_index)
        if not failures and path.name in expected:
            count = storage.open_shard(path).episode_count
            if count != expected[path.name]:
                failed = True
                log.error("%s: manifest says %d episodes, shard has %d",
                          path.name, expected[path.name], count)
    if failed:
        return 1
    if opts.get("field_checksums"):
        doc = {"shards": {path.name: storage.field_checksums(path) for path in shard_paths}}
        sys.stdout.write(_dumps(doc))
    log.info("verified %d shard(s), no failures", len(shard_paths))
    return 0


def _cmd_report(opts) -> int:
    reports = []
    for raw_path in opts["paths"]:
        doc = json.loads(Path(raw_path).read_text(encoding="utf-8"))
        reports.append(capability.report_from_json(doc))
    fmt = opts["format"]
    if fmt not in report.EXPORT_FORMATS:
        raise UsageError(f"unknown format {fmt!r}; choose from {report.EXPORT_FORMATS}")
    raw_mask = opts.get("tier_mask") or ""
    tier_mask = tuple(t for t in raw_mask.split(",") if t)
    payload = report.export(report.aggregate(reports), fmt, tier_mask=tier_mask)
    out = _out_dir(opts)
    filename = {"json": "eval_report.json", "csv": "eval_report.csv",
                "radar_json": "radar.json"}[fmt]
    if out is None:
        sys.stdout.buffer.write(payload)
        sys.stdout.flush()
    else:
        (out / filename).write_bytes(payload)
        log.info("wrote %s", out / filename)
    return 0


# ---------------------------------------------------------------------------
# Parser assembly.


def _defaults_gen():
    return {"family": None, "tier": None, "template": None, "n": 10,
            "seed": _env_seed(), "out": None, "policy": "expert",
            "dataset": "nebula", "image_size": 16, "camera_mask": "",
            "dump_scene": False}


def _defaults_capability():
    return {"family": None, "tier": None, "n": 10, "seed": _env_seed(),
            "out": None, "policy": None, "workers": 1, "record": False,
            "dataset": "episodes"}


def _defaults_stress():
    return {"kind": None, "level": None, "policy": None, "steps": 200,
            "episodes": 20, "seed": _env_seed(), "out": None}


def _defaults_ablate():
    return {"family": "Perception", "tier": "Easy", "n": 20,
            "seed": _env_seed(), "out": None, "policy": None}


def _defaults_query():
    return {"dataset_dir": None, "query": None, "dataset": None}


def _defaults_split():
    return {"dataset_dir": None, "train_ratio": 0.8, "strata": "family",
            "seed": _env_seed(), "holdout_robustness": False,
            "dataset": None, "out": None}


def _defaults_verify():
    return {"target": None, "field_checksums": False, "dataset": None}


def _defaults_report():
    return {"paths": None, "format": "json", "tier_mask": "", "out": None}


_SUBCOMMANDS = {
    "gen": (_cmd_gen, _defaults_gen),
    "run-capability": (_cmd_run_capability, _defaults_capability),
    "run-stress": (_cmd_run_stress, _defaults_stress),
    "ablate-isolation": (_cmd_ablate_isolation, _defaults_ablate),
    "query": (_cmd_query, _defaults_query),
    "split": (_cmd_split, _defaults_split),
    "verify": (_cmd_verify, _defaults_verify),
    "report": (_cmd_report, _defaults_report),
}

_REQUIRED = {
    "gen": ("out",),
    "run-capability": ("policy",),
    "run-stress": ("kind", "level", "policy"),
    "ablate-isolation": ("policy",),
    "query": ("dataset_dir", "query"),
    "split": ("dataset_dir",),
    "verify": ("target",),
    "report": ("paths",),
}


def build_parser() -> _Parser:
    parser = _Parser(prog="nebula", description="episode data platform and evaluation harness")
    subs = parser.add_subparsers(dest="subcommand", metavar="subcommand")

    def sub(name, **kwargs):
        # SUPPRESS keeps unset flags out of the namespace so a --config file
        # can fill them without fighting argparse defaults.
        p = subs.add_parser(name, argument_default=argparse.SUPPRESS, **kwargs)
        p.add_argument("--config", help="JSON file supplying any flag; CLI flags win")
        p.set_defaults(subcommand=name)
        return p

    p = sub("gen", help="materialize scripted-expert episodes into a shard")
    p.add_argument("--family", choices=taskgen.FAMILIES)
    p.add_argument("--tier", choices=taskgen.TIERS)
    p.add_argument("--template", type=int, choices=taskgen.TEMPLATE_IDS)
    p.add_argument("--n", type=int, help="episodes per task template")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (required)")
    p.add_argument("--policy", help="policy selector, default expert")
    p.add_argument("--dataset", help="dataset name, default nebula")
    p.add_argument("--image-size", type=int, dest="image_size",
                   help="square image edge in pixels, default 16")
    p.add_argument("--camera-mask", dest="camera_mask",
                   help="comma-separated cameras rendered as background only")
    p.add_argument("--dump-scene", dest="dump_scene", action="store_true",
                   help="write initial scene JSON per episode")

    p = sub("run-capability", help="success-rate sweep over the task catalog")
    p.add_argument("--policy")
    p.add_argument("--family", choices=taskgen.FAMILIES)
    p.add_argument("--tier", choices=taskgen.TIERS)
    p.add_argument("--n", type=int, help="episodes per task template")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--record", action="store_true", help="also write episodes as a shard")
    p.add_argument("--dataset")
    p.add_argument("--out")

    p = sub("run-stress", help="run one stress probe")
    p.add_argument("--kind")
    p.add_argument("--level")
    p.add_argument("--policy")
    p.add_argument("--steps", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub("ablate-isolation", help="isolated vs entangled success rates")
    p.add_argument("--policy")
    p.add_argument("--family", choices=taskgen.FAMILIES)
    p.add_argument("--tier", choices=taskgen.TIERS)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub("query", help="filter a dataset manifest")
    p.add_argument("dataset_dir")
    p.add_argument("--query", help="JSON query expression")
    p.add_argument("--dataset")

    p = sub("split", help="stratified train/test partition")
    p.add_argument("dataset_dir")
    p.add_argument("--train-ratio", type=float, dest="train_ratio")
    p.add_argument("--strata", choices=query.STRATA_KEYS)
    p.add_argument("--seed", type=int)
    p.add_argument("--holdout-robustness", dest="holdout_robustness", action="store_true",
                   help="keep the Robustness family out of train")
    p.add_argument("--dataset")
    p.add_argument("--out")

    p = sub("verify", help="integrity-scan a dataset or single shard")
    p.add_argument("target")
    p.add_argument("--field-checksums", dest="field_checksums", action="store_true",
                   help="print per-field CRCs as JSON on stdout")
    p.add_argument("--dataset")

    p = sub("report", help="aggregate capability reports")
    p.add_argument("paths", nargs="+")
    p.add_argument("--format", choices=report.EXPORT_FORMATS)
    p.add_argument("--tier-mask", dest="tier_mask",
                   help="comma-separated tiers to leave out of the radar")
    p.add_argument("--out")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage/help
        return int(exc.code or 0)
    if not getattr(ns, "subcommand", None):
        print(GRAMMAR, file=sys.stderr)
        return 2
    handler, defaults = _SUBCOMMANDS[ns.subcommand]
    try:
        opts = _merge_options(ns, defaults())
        for key in _REQUIRED[ns.subcommand]:
            if opts.get(key) in (None, ""):
                raise UsageError(f"{ns.subcommand} requires --{key.replace('_', '-')}")
        return handler(opts)
    except UsageError as exc:
        print(GRAMMAR, file=sys.stderr)
        print(f"nebula {ns.subcommand}: error: {exc}", file=sys.stderr)
        return 2
    except NebulaError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1
    except OSError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
