#!/usr/bin/env python3
"""Full desk evaluation: capability sweep plus stress probes per policy.

Runs each requested policy over the catalog, probes it on the stress axis,
aggregates everything into one report directory, and prints a compact grid.
Outputs: per-policy capability_{name}.json and stress_{name}.json, the
merged eval_report.json/csv, and radar.json for plotting.

    python3 scripts/run_desk_eval.py --out results/ --episodes 5 \
        --policies expert random:0 --stress-kinds Stability Frequency
"""
import argparse
import json
import sys
from pathlib import Path

from nebula import report as report_mod
from nebula.capability import run_capability_suite
from nebula.cli import parse_policy
from nebula.stress import StressProfile, run_probe
from nebula.taskgen import FAMILIES, TIERS


def safe_name(selector: str) -> str:
    return "".join(c if c.isalnum() else "-" for c in selector).strip("-")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--policies", nargs="+", default=["expert", "random:0"])
    parser.add_argument("--families", nargs="+", default=list(FAMILIES), choices=FAMILIES)
    parser.add_argument("--tiers", nargs="+", default=list(TIERS), choices=TIERS)
    parser.add_argument("--episodes", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--stress-kinds", nargs="+",
                        default=["Stability", "Frequency", "Latency"])
    parser.add_argument("--stress-level", default="v1")
    parser.add_argument("--stress-steps", type=int, default=200)
    args = parser.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)

    reports = []
    metrics = {}
    for selector in args.policies:
        name = safe_name(selector)
        factory = parse_policy(selector)
        print(f"capability sweep: {selector}", file=sys.stderr)
        cap = run_capability_suite(
            factory, families=tuple(args.families), tiers=tuple(args.tiers),
            episodes_per_task=args.episodes, seed=args.seed, workers=args.workers)
        reports.append(cap)
        (args.out / f"capability_{name}.json").write_text(
            json.dumps(cap.to_json(), indent=2, sort_keys=True) + "\n")

        records = []
        for kind in args.stress_kinds:
            print(f"stress probe: {selector} {kind} {args.stress_level}", file=sys.stderr)
            policy = factory()
            try:
                records.append(run_probe(policy, StressProfile(
                    kind=kind, level=args.stress_level, steps=args.stress_steps),
                    seed=args.seed))
            finally:
                policy.close()
        metrics[cap.policy_id] = records
        (args.out / f"stress_{name}.json").write_text(json.dumps(
            {r.kind: r.to_json() for r in records}, indent=2, sort_keys=True) + "\n")

    merged = report_mod.aggregate(reports, metrics=metrics)
    for fmt, filename in (("json", "eval_report.json"), ("csv", "eval_report.csv"),
                          ("radar_json", "radar.json")):
        (args.out / filename).write_bytes(report_mod.export(merged, fmt))

    width = max(len(f) for f in args.families) + 2
    print("\nmean success by family x tier over "
          f"{len(args.policies)} policies ({args.episodes} episodes/cell)")
    print(" " * width + "".join(t.ljust(9) for t in args.tiers))
    by_cell = {(c.family, c.tier): c for c in merged.cells}
    for family in args.families:
        row = family.ljust(width)
        for tier in args.tiers:
            cell = by_cell.get((family, tier))
            row += (f"{cell.mean:.2f}" if cell else "  - ").ljust(9)
        print(row)
    print(f"\nwrote {args.out}/eval_report.json, .csv, radar.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
