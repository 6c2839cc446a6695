#!/usr/bin/env python3
"""Render a radar payload as text bars, one block per policy and tier.

    python3 scripts/plot_radar.py results/radar.json
    nebula report results/capability_expert.json --format radar_json | \
        python3 scripts/plot_radar.py -
"""
import argparse
import json
import sys

BAR_WIDTH = 24


def render(payload: dict, out=sys.stdout) -> None:
    if payload.get("kind") != "radar":
        raise SystemExit(f"not a radar payload: kind={payload.get('kind')!r}")
    axes = payload["axes"]
    label_width = max(len(a) for a in axes) + 2
    for series in payload["series"]:
        print(f"{series['policy_id']} [{series['tier']}]", file=out)
        for axis, value in zip(axes, series["values"]):
            if value is None:
                print(f"  {axis.ljust(label_width)}(no data)", file=out)
                continue
            filled = round(value * BAR_WIDTH)
            bar = "#" * filled + "." * (BAR_WIDTH - filled)
            print(f"  {axis.ljust(label_width)}{bar} {value:.2f}", file=out)
        print(file=out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("radar", help="radar.json path, or - for stdin")
    args = parser.parse_args(argv)
    if args.radar == "-":
        payload = json.load(sys.stdin)
    else:
        with open(args.radar, encoding="utf-8") as f:
            payload = json.load(f)
    render(payload)
    return 0


if __name__ == "__main__":
    sys.exit(main())
