"""Cross-policy aggregation and export of evaluation results.

Aggregation is over capability reports that share one catalog filter: each
(family, tier) cell gets the mean and population standard deviation of the
per-policy rates. Cells outside the shared filter are flagged as missing and
never zero-filled; imputing them would fabricate results.

Exports are deterministic byte strings: full JSON, a flat CSV of template
rows, and a radar payload with a fixed axis order and an optional tier mask
(excluding a tier reproduces the coarse two-ring view).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

from . import taskgen
from .capability import CapabilityReport, report_from_json
from .errors import CatalogMismatch, UnknownFormat
from .stress import MetricRecord, metric_from_json

# radar axes keep their short display labels in a fixed order
RADAR_AXES = ("Perception", "Control", "Language", "Spatial", "Dynamic", "Robustness")
_AXIS_FAMILY = {
    "Perception": "Perception",
    "Control": "Control",
    "Language": "Language",
    "Spatial": "SpatialReasoning",
    "Dynamic": "DynamicAdaptation",
    "Robustness": "Robustness",
}

EXPORT_FORMATS = ("json", "csv", "radar_json")


@dataclass(frozen=True)
class AggregateCell:
    family: str
    tier: str
    mean: float
    std: float
    count: int


@dataclass(frozen=True)
class EvalReport:
    policies: tuple[str, ...]
    reports: tuple[CapabilityReport, ...]
    cells: tuple[AggregateCell, ...]
    missing: tuple[tuple[str, str], ...]
    metrics: dict[str, tuple[MetricRecord, ...]] = field(default_factory=dict)

    def cell(self, family: str, tier: str) -> AggregateCell:
        for c in self.cells:
            if (c.family, c.tier) == (family, tier):
                return c
        raise CatalogMismatch(f"no aggregate cell for {family}/{tier}")

    def to_json(self) -> dict:
        return {
            "kind": "eval_report",
            "policies": list(self.policies),
            "reports": [r.to_json(include_timing=False) for r in self.reports],
            "cells": [
                {"family": c.family, "tier": c.tier, "mean": c.mean,
                 "std": c.std, "count": c.count}
                for c in self.cells
            ],
            "missing": [list(pair) for pair in self.missing],
            "metrics": {
                policy: [m.to_json() for m in records]
                for policy, records in sorted(self.metrics.items())
            },
        }


def eval_report_from_json(doc: dict) -> EvalReport:
    if doc.get("kind") != "eval_report":
        raise CatalogMismatch(f"not an eval report: kind={doc.get('kind')!r}")
    return EvalReport(
        policies=tuple(doc["policies"]),
        reports=tuple(report_from_json(r) for r in doc["reports"]),
        cells=tuple(
            AggregateCell(family=c["family"], tier=c["tier"], mean=c["mean"],
                          std=c["std"], count=c["count"])
            for c in doc["cells"]
        ),
        missing=tuple((f, t) for f, t in doc["missing"]),
        metrics={
            policy: tuple(metric_from_json(m) for m in records)
            for policy, records in doc.get("metrics", {}).items()
        },
    )


def _pstd(values) -> float:
    mu = sum(values) / len(values)
    return math.sqrt(sum((v - mu) ** 2 for v in values) / len(values))


def aggregate(reports, metrics: dict | None = None) -> EvalReport:
    """Mean and population std (divisor N) per (family, tier) over policies."""
    reports = tuple(reports)
    if not reports:
        raise CatalogMismatch("nothing to aggregate")
    covered = {(r.family, r.tier, r.template_id) for r in reports[0].results}
    for rep in reports[1:]:
        cells = {(r.family, r.tier, r.template_id) for r in rep.results}
        if cells != covered:
            raise CatalogMismatch("reports cover different catalog filters")

    cell_keys = sorted({(f, t) for f, t, _ in covered},
                       key=lambda k: (taskgen.FAMILIES.index(k[0]), taskgen.TIERS.index(k[1])))
    cells = []
    for family, tier in cell_keys:
        # summing in sorted order makes the aggregate exactly permutation
        # invariant despite float addition being order-sensitive
        rates = sorted(rep.family_tier_means()[(family, tier)] for rep in reports)
        cells.append(AggregateCell(
            family=family, tier=tier,
            mean=sum(rates) / len(rates), std=_pstd(rates), count=len(rates),
        ))
    missing = tuple(
        (family, tier)
        for family in taskgen.FAMILIES
        for tier in taskgen.TIERS
        if (family, tier) not in {(c.family, c.tier) for c in cells}
    )
    return EvalReport(
        policies=tuple(rep.policy_id for rep in reports),
        reports=reports,
        cells=tuple(cells),
        missing=missing,
        metrics=dict(metrics or {}),
    )


def _csv_bytes(report: EvalReport) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["policy_id", "family", "tier", "template_id",
                     "episodes", "successes", "rate"])
    for rep in report.reports:
        for r in rep.results:
            writer.writerow([rep.policy_id, r.family, r.tier, r.template_id,
                             r.episodes_run, r.successes, repr(r.success_rate)])
    return out.getvalue().encode()


def radar_payload(report: EvalReport, tier_mask: tuple[str, ...] = ()) -> dict:
    """Axis values per policy and tier; a masked tier is dropped entirely."""
    unknown = set(tier_mask) - set(taskgen.TIERS)
    if unknown:
        raise CatalogMismatch(f"unknown tiers in mask: {sorted(unknown)}")
    tiers = tuple(t for t in taskgen.TIERS if t not in tier_mask)
    series = []
    for rep in report.reports:
        means = rep.family_tier_means()
        for tier in tiers:
            values = [means.get((_AXIS_FAMILY[axis], tier)) for axis in RADAR_AXES]
            series.append({"policy_id": rep.policy_id, "tier": tier, "values": values})
    return {
        "kind": "radar",
        "axes": list(RADAR_AXES),
        "tiers": list(tiers),
        "series": series,
    }


def export(report: EvalReport, format: str, tier_mask: tuple[str, ...] = ()) -> bytes:
    if format == "json":
        return json.dumps(report.to_json(), indent=2, sort_keys=True).encode() + b"\n"
    if format == "csv":
        return _csv_bytes(report)
    if format == "radar_json":
        payload = radar_payload(report, tier_mask)
        return json.dumps(payload, indent=2, sort_keys=True).encode() + b"\n"
    raise UnknownFormat(f"unknown export format {format!r}; expected one of {EXPORT_FORMATS}")
