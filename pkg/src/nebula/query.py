"""Fluent metadata queries and stratified splitting over manifested datasets.

Queries run against manifest rows only; no shard record is ever decoded.
A QueryExpr is a conjunction of optional atoms; the empty expression matches
everything. Results come back in manifest order (shard position, then record
index), so reordering shard files reorders results but never changes the set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import MalformedQuery
from .rng import fisher_yates, substream
from .storage import EpisodeMeta, Manifest

ROBUSTNESS_FAMILY = "Robustness"


@dataclass(frozen=True)
class QueryExpr:
    family: frozenset[str] | None = None
    tier: frozenset[str] | None = None
    final_success: int | None = None
    step_count: tuple[int, int] | None = None
    instruction_contains: str | None = None
    template_id: frozenset[int] | None = None

    def __post_init__(self):
        if self.family is not None:
            object.__setattr__(self, "family", frozenset(self.family))
        if self.tier is not None:
            object.__setattr__(self, "tier", frozenset(self.tier))
        if self.template_id is not None:
            object.__setattr__(self, "template_id", frozenset(self.template_id))
        if self.step_count is not None:
            object.__setattr__(self, "step_count", tuple(self.step_count))

    # fluent constructors; each returns a new expression with one more atom
    def with_family(self, *names: str) -> "QueryExpr":
        return replace(self, family=frozenset(names))

    def with_tier(self, *tiers: str) -> "QueryExpr":
        return replace(self, tier=frozenset(tiers))

    def with_final_success(self, flag: int) -> "QueryExpr":
        return replace(self, final_success=flag)

    def with_step_count(self, lo: int, hi: int) -> "QueryExpr":
        return replace(self, step_count=(lo, hi))

    def with_instruction_containing(self, needle: str) -> "QueryExpr":
        return replace(self, instruction_contains=needle)

    def with_template_id(self, *ids: int) -> "QueryExpr":
        return replace(self, template_id=frozenset(ids))


def check_query(q: QueryExpr):
    if q.final_success is not None and q.final_success not in (0, 1):
        raise MalformedQuery(f"final_success must be 0 or 1, got {q.final_success!r}")
    if q.step_count is not None:
        if len(q.step_count) != 2:
            raise MalformedQuery(f"step_count must be [lo, hi], got {q.step_count!r}")
        lo, hi = q.step_count
        if lo > hi:
            raise MalformedQuery(f"step_count range inverted: {lo} > {hi}")


def matches(q: QueryExpr, row: EpisodeMeta) -> bool:
    if q.family is not None and row.family not in q.family:
        return False
    if q.tier is not None and row.tier not in q.tier:
        return False
    if q.final_success is not None and row.final_success != q.final_success:
        return False
    if q.step_count is not None and not q.step_count[0] <= row.step_count <= q.step_count[1]:
        return False
    if (
        q.instruction_contains is not None
        and q.instruction_contains.lower() not in row.instruction.lower()
    ):
        return False
    if q.template_id is not None and row.template_id not in q.template_id:
        return False
    return True


def filter_episodes(dataset: Manifest, q: QueryExpr) -> list[EpisodeMeta]:
    """All rows satisfying every atom of q, in manifest (shard, index) order."""
    check_query(q)
    return [row for row in dataset.all_episodes() if matches(q, row)]


_QUERY_KEYS = {
    "family",
    "tier",
    "final_success",
    "step_count",
    "instruction_contains",
    "template_id",
}


def query_from_json(doc: dict) -> QueryExpr:
    if not isinstance(doc, dict):
        raise MalformedQuery(f"query must be a JSON object, got {type(doc).__name__}")
    unknown = set(doc) - _QUERY_KEYS
    if unknown:
        raise MalformedQuery(f"unknown query keys: {sorted(unknown)}")
    q = QueryExpr(
        family=frozenset(doc["family"]) if "family" in doc else None,
        tier=frozenset(doc["tier"]) if "tier" in doc else None,
        final_success=doc.get("final_success"),
        step_count=tuple(doc["step_count"]) if "step_count" in doc else None,
        instruction_contains=doc.get("instruction_contains"),
        template_id=frozenset(doc["template_id"]) if "template_id" in doc else None,
    )
    check_query(q)
    return q


def query_to_json(q: QueryExpr) -> dict:
    doc: dict = {}
    if q.family is not None:
        doc["family"] = sorted(q.family)
    if q.tier is not None:
        doc["tier"] = sorted(q.tier)
    if q.final_success is not None:
        doc["final_success"] = q.final_success
    if q.step_count is not None:
        doc["step_count"] = list(q.step_count)
    if q.instruction_contains is not None:
        doc["instruction_contains"] = q.instruction_contains
    if q.template_id is not None:
        doc["template_id"] = sorted(q.template_id)
    return doc


# ---------------------------------------------------------------------------
# Stratified splitting

STRATA_KEYS = ("family", "family_x_tier")


@dataclass(frozen=True)
class SplitSpec:
    train_ratio: float
    strata_key: str = "family"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.train_ratio <= 1.0:
            raise MalformedQuery(f"train_ratio {self.train_ratio} outside [0, 1]")
        if self.strata_key not in STRATA_KEYS:
            raise MalformedQuery(f"strata_key must be one of {STRATA_KEYS}")


def _stratum_label(row: EpisodeMeta, key: str) -> str:
    return row.family if key == "family" else f"{row.family}|{row.tier}"


def stratified_split(
    dataset: Manifest, spec: SplitSpec, holdout_robustness: bool = False
) -> tuple[list[EpisodeMeta], list[EpisodeMeta]]:
    """Seeded per-stratum partition; train gets round-half-up of n x ratio.

    With holdout_robustness the Robustness family goes entirely to test
    (that family is evaluation-only).
    """
    rows = dataset.all_episodes()
    if not rows:
        raise MalformedQuery("cannot split an empty dataset")
    strata: dict[str, list[int]] = {}
    for pos, row in enumerate(rows):
        strata.setdefault(_stratum_label(row, spec.strata_key), []).append(pos)
    train_positions: set[int] = set()
    for label in sorted(strata):
        positions = strata[label]
        if holdout_robustness and label.split("|")[0] == ROBUSTNESS_FAMILY:
            continue
        k = math.floor(len(positions) * spec.train_ratio + 0.5)
        shuffled = fisher_yates(positions, substream(spec.seed, "split", label))
        train_positions.update(shuffled[:k])
    train = [rows[p] for p in range(len(rows)) if p in train_positions]
    test = [rows[p] for p in range(len(rows)) if p not in train_positions]
    return train, test
