"""Bit-exact on-disk shard format for episodes, with index, checksums, manifest.

File layout (all integers little-endian):

    header   := magic "NEBS" (4 bytes) | u16 format_version | u64 episode_count
    records  := episode_count x (u32 payload_len | payload)
    index    := episode_count x (u64 offset | u64 length | u32 crc32c)
    footer   := u64 index_offset

Index offsets point at the start of each record's length prefix; length covers
prefix plus payload, and the CRC is computed over those same bytes, so every
byte of the record region is checksummed. Images are stored raw (uncompressed).

Episode payload encoding:

    payload := str episode_id | str instruction
             | str robot_id | u16 dof | u8 gripper | u16 arm_count
             | dof x (f64 min | f64 max)
             | str family | str tier | u32 template_id | u64 seed | str variant_tag
             | u8 final_success | u32 step_count | step_count x step
    step    := u32 index | u8 success | u16 n | n x f64 action
             | u32 t | f64 wall_time
             | u16 n | n x f64 q | u16 n | n x f64 q_dot
             | u8 view_count | view_count x view
    view    := u8 camera | u8 modality | u16 width | u16 height | u32 n | n bytes
    str     := u32 byte_length | UTF-8 bytes

Camera/modality/gripper are indices into the fixed tuples in episode.py; views
are written sorted by (camera, modality) so encoding is insertion-order free.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

from .episode import (
    CAMERA_IDS,
    GRIPPER_TYPES,
    MODALITIES,
    Action,
    EmbodimentConfig,
    Episode,
    Image,
    Observation,
    Step,
    TaskMeta,
    validate_episode,
)
from .errors import (
    ChecksumMismatch,
    FormatVersionUnsupported,
    IndexOutOfRange,
    InvalidEpisode,
    UnknownFormat,
)

MAGIC = b"NEBS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQ")
_INDEX_ENTRY = struct.Struct("<QQI")
_FOOTER = struct.Struct("<Q")

# ---------------------------------------------------------------------------
# CRC32C (Castagnoli, reflected polynomial 0x82F63B78). No C-backed
# implementation is available here, so this is table-driven pure Python;
# throughput is modest but shards in this project stay desk-scale.


def _make_table() -> tuple[int, ...]:
    poly = 0x82F63B78
    table = []
    for n in range(256):
        c = n
        for _ in range(8):
            c = (c >> 1) ^ poly if c & 1 else c >> 1
        table.append(c)
    return tuple(table)


_TABLE = _make_table()


def crc32c(data: bytes, crc: int = 0) -> int:
    table = _TABLE
    c = crc ^ 0xFFFFFFFF
    for b in data:
        c = table[(c ^ b) & 0xFF] ^ (c >> 8)
    return c ^ 0xFFFFFFFF


# ---------------------------------------------------------------------------
# Episode payload codec


class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise UnknownFormat(f"record truncated: wanted {n} bytes at {self.pos}")
        out = self.buf[self.pos : end]
        self.pos = end
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def f64s(self, n: int) -> tuple[float, ...]:
        return struct.unpack(f"<{n}d", self.take(8 * n))

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def _pack_str(out: bytearray, s: str):
    raw = s.encode("utf-8")
    out += struct.pack("<I", len(raw))
    out += raw


def _pack_f64s(out: bytearray, values: tuple[float, ...], width_fmt: str = "<H"):
    out += struct.pack(width_fmt, len(values))
    out += struct.pack(f"<{len(values)}d", *values)


def encode_episode(ep: Episode) -> bytes:
    out = bytearray()
    _pack_str(out, ep.episode_id)
    _pack_str(out, ep.instruction)
    emb = ep.embodiment
    _pack_str(out, emb.robot_id)
    out += struct.pack("<HBH", emb.dof, GRIPPER_TYPES.index(emb.gripper), emb.arm_count)
    for lo, hi in emb.joint_limits:
        out += struct.pack("<dd", lo, hi)
    meta = ep.task_meta
    _pack_str(out, meta.family)
    _pack_str(out, meta.tier)
    out += struct.pack("<IQ", meta.template_id, meta.seed)
    _pack_str(out, meta.variant_tag)
    out += struct.pack("<BI", ep.final_success, len(ep.steps))
    for step in ep.steps:
        out += struct.pack("<IB", step.index, step.success)
        _pack_f64s(out, step.action.values)
        obs = step.observation
        out += struct.pack("<Id", obs.t, obs.wall_time)
        _pack_f64s(out, obs.q)
        _pack_f64s(out, obs.q_dot)
        keys = sorted(obs.views, key=lambda k: (CAMERA_IDS.index(k[0]), MODALITIES.index(k[1])))
        out += struct.pack("<B", len(keys))
        for cam, mod in keys:
            img = obs.views[(cam, mod)]
            out += struct.pack(
                "<BBHHI",
                CAMERA_IDS.index(cam),
                MODALITIES.index(mod),
                img.width,
                img.height,
                len(img.data),
            )
            out += img.data
    return bytes(out)


def decode_episode(payload: bytes) -> Episode:
    r = _Reader(payload)
    episode_id = r.text()
    instruction = r.text()
    robot_id = r.text()
    dof, gripper_ix, arm_count = struct.unpack("<HBH", r.take(5))
    limits = tuple(struct.unpack("<dd", r.take(16)) for _ in range(dof))
    emb = EmbodimentConfig(
        robot_id=robot_id,
        dof=dof,
        gripper=GRIPPER_TYPES[gripper_ix],
        arm_count=arm_count,
        joint_limits=limits,
    )
    family = r.text()
    tier = r.text()
    template_id, seed = struct.unpack("<IQ", r.take(12))
    variant_tag = r.text()
    meta = TaskMeta(family=family, tier=tier, template_id=template_id, seed=seed, variant_tag=variant_tag)
    final_success, step_count = struct.unpack("<BI", r.take(5))
    steps = []
    for _ in range(step_count):
        index, success = struct.unpack("<IB", r.take(5))
        action = Action(values=r.f64s(r.u16()))
        t, wall_time = struct.unpack("<Id", r.take(12))
        q = r.f64s(r.u16())
        q_dot = r.f64s(r.u16())
        views = {}
        for _ in range(r.u8()):
            cam_ix, mod_ix, width, height, nbytes = struct.unpack("<BBHHI", r.take(10))
            if cam_ix >= len(CAMERA_IDS) or mod_ix >= len(MODALITIES):
                raise UnknownFormat(f"view ids out of range: camera {cam_ix}, modality {mod_ix}")
            views[(CAMERA_IDS[cam_ix], MODALITIES[mod_ix])] = Image(
                width=width, height=height, modality=MODALITIES[mod_ix], data=r.take(nbytes)
            )
        obs = Observation(views=views, q=q, q_dot=q_dot, t=t, wall_time=wall_time)
        steps.append(Step(index=index, observation=obs, action=action, success=success))
    if r.pos != len(payload):
        raise UnknownFormat(f"{len(payload) - r.pos} trailing bytes after record")
    return Episode(
        episode_id=episode_id,
        instruction=instruction,
        embodiment=emb,
        task_meta=meta,
        steps=tuple(steps),
        final_success=final_success,
    )


# ---------------------------------------------------------------------------
# Shard read/write


@dataclass(frozen=True)
class IndexEntry:
    offset: int
    length: int
    crc32c: int


@dataclass(frozen=True)
class Shard:
    path: str
    format_version: int
    episode_count: int
    index: tuple[IndexEntry, ...]


def write_shard(episodes: list[Episode], path: str | Path) -> Shard:
    for i, ep in enumerate(episodes):
        violations = validate_episode(ep)
        if violations:
            raise InvalidEpisode(violations)
    path = Path(path)
    entries: list[IndexEntry] = []
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(episodes)))
        offset = _HEADER.size
        for ep in episodes:
            payload = encode_episode(ep)
            record = struct.pack("<I", len(payload)) + payload
            f.write(record)
            entries.append(IndexEntry(offset=offset, length=len(record), crc32c=crc32c(record)))
            offset += len(record)
        index_offset = offset
        for e in entries:
            f.write(_INDEX_ENTRY.pack(e.offset, e.length, e.crc32c))
        f.write(_FOOTER.pack(index_offset))
    return Shard(
        path=str(path),
        format_version=FORMAT_VERSION,
        episode_count=len(episodes),
        index=tuple(entries),
    )


def open_shard(path: str | Path) -> Shard:
    """Read header, footer, and index; record payloads stay on disk."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise UnknownFormat(f"{path}: too short for a shard header")
        magic, version, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise UnknownFormat(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise FormatVersionUnsupported(f"{path}: format version {version}")
        f.seek(0, 2)
        size = f.tell()
        if size < _HEADER.size + _FOOTER.size:
            raise UnknownFormat(f"{path}: too short for a footer")
        f.seek(size - _FOOTER.size)
        (index_offset,) = _FOOTER.unpack(f.read(_FOOTER.size))
        index_bytes = count * _INDEX_ENTRY.size
        if index_offset < _HEADER.size or index_offset + index_bytes + _FOOTER.size > size:
            raise UnknownFormat(f"{path}: index region out of bounds")
        f.seek(index_offset)
        raw = f.read(index_bytes)
        if len(raw) < index_bytes:
            raise UnknownFormat(f"{path}: truncated index")
    entries = tuple(
        IndexEntry(*_INDEX_ENTRY.unpack_from(raw, i * _INDEX_ENTRY.size)) for i in range(count)
    )
    return Shard(path=str(path), format_version=version, episode_count=count, index=entries)


def read_episode(shard: Shard, i: int) -> Episode:
    """Decode record i alone; verifies its CRC before decoding."""
    if not 0 <= i < shard.episode_count:
        raise IndexOutOfRange(f"episode {i} of {shard.episode_count}")
    entry = shard.index[i]
    with open(shard.path, "rb") as f:
        f.seek(entry.offset)
        record = f.read(entry.length)
    if len(record) != entry.length:
        raise ChecksumMismatch(f"record {i}: short read")
    actual = crc32c(record)
    if actual != entry.crc32c:
        raise ChecksumMismatch(
            f"record {i}: crc32c {actual:#010x} != index {entry.crc32c:#010x}"
        )
    (payload_len,) = struct.unpack_from("<I", record)
    if payload_len != entry.length - 4:
        raise ChecksumMismatch(f"record {i}: length prefix disagrees with index")
    return decode_episode(record[4:])


@dataclass(frozen=True)
class IntegrityFailure:
    code: str
    detail: str
    record_index: int | None = None


def verify_shard(path: str | Path) -> list[IntegrityFailure]:
    """Full-file integrity scan; returns every detected failure (empty = pristine)."""
    path = Path(path)
    failures: list[IntegrityFailure] = []
    data = path.read_bytes()
    if len(data) < _HEADER.size + _FOOTER.size:
        return [IntegrityFailure("INDEX_TRUNCATED", f"file is only {len(data)} bytes")]
    magic, version, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        failures.append(IntegrityFailure("BAD_MAGIC", f"got {magic!r}"))
        return failures
    if version != FORMAT_VERSION:
        failures.append(IntegrityFailure("BAD_VERSION", f"got {version}"))
        return failures
    (index_offset,) = _FOOTER.unpack_from(data, len(data) - _FOOTER.size)
    index_bytes = count * _INDEX_ENTRY.size
    index_end = index_offset + index_bytes
    if (
        index_offset < _HEADER.size
        or index_end + _FOOTER.size > len(data)
    ):
        failures.append(
            IntegrityFailure(
                "INDEX_TRUNCATED",
                f"index claims [{index_offset}, {index_end}) in a {len(data)}-byte file",
            )
        )
        return failures
    if index_end + _FOOTER.size != len(data):
        failures.append(
            IntegrityFailure("SIZE_MISMATCH", f"{len(data) - index_end - _FOOTER.size} stray bytes")
        )
    prev_end = _HEADER.size
    for i in range(count):
        offset, length, crc = _INDEX_ENTRY.unpack_from(data, index_offset + i * _INDEX_ENTRY.size)
        if offset != prev_end:
            failures.append(
                IntegrityFailure("INDEX_ORDER", f"offset {offset}, expected {prev_end}", i)
            )
        if offset + length > index_offset:
            failures.append(
                IntegrityFailure("INDEX_ORDER", f"record [{offset}, {offset + length}) spills into index", i)
            )
            return failures
        record = data[offset : offset + length]
        actual = crc32c(record)
        if actual != crc:
            failures.append(
                IntegrityFailure("CRC_MISMATCH", f"crc32c {actual:#010x} != {crc:#010x}", i)
            )
        elif length >= 4:
            (payload_len,) = struct.unpack_from("<I", record)
            if payload_len != length - 4:
                failures.append(
                    IntegrityFailure("PREFIX_MISMATCH", f"prefix {payload_len} vs length {length}", i)
                )
        prev_end = offset + length
    if prev_end != index_offset:
        failures.append(
            IntegrityFailure("INDEX_ORDER", f"records end at {prev_end}, index starts at {index_offset}")
        )
    return failures


CHECKSUM_FIELDS = (
    "episode_id",
    "instruction",
    "task_meta",
    "final_success",
    "actions",
    "q",
    "q_dot",
    "success_flags",
    "images",
)


def field_checksums(path: str | Path) -> dict:
    """Running per-field CRCs over every episode, in shard order.

    This is the agreement surface between independent shard readers: two
    implementations that parse the same file must produce the same document.
    Floats are hashed as their little-endian 64-bit encoding, images as raw
    bytes in (camera, modality) order, and task_meta as a '|'-joined line, so
    nothing depends on a language's float or string formatting.
    """
    shard = open_shard(path)
    crcs = dict.fromkeys(CHECKSUM_FIELDS, 0)
    episode_ids = []
    for i in range(shard.episode_count):
        ep = read_episode(shard, i)
        episode_ids.append(ep.episode_id)
        meta = ep.task_meta
        meta_line = f"{meta.family}|{meta.tier}|{meta.template_id}|{meta.seed}|{meta.variant_tag}"
        crcs["episode_id"] = crc32c(ep.episode_id.encode(), crcs["episode_id"])
        crcs["instruction"] = crc32c(ep.instruction.encode(), crcs["instruction"])
        crcs["task_meta"] = crc32c(meta_line.encode(), crcs["task_meta"])
        crcs["final_success"] = crc32c(bytes([ep.final_success]), crcs["final_success"])
        for step in ep.steps:
            obs = step.observation
            values = step.action.values
            crcs["actions"] = crc32c(struct.pack(f"<{len(values)}d", *values), crcs["actions"])
            crcs["q"] = crc32c(struct.pack(f"<{len(obs.q)}d", *obs.q), crcs["q"])
            crcs["q_dot"] = crc32c(struct.pack(f"<{len(obs.q_dot)}d", *obs.q_dot), crcs["q_dot"])
            crcs["success_flags"] = crc32c(bytes([step.success]), crcs["success_flags"])
            for key in sorted(obs.views, key=lambda k: (CAMERA_IDS.index(k[0]), MODALITIES.index(k[1]))):
                crcs["images"] = crc32c(obs.views[key].data, crcs["images"])
    return {
        "episode_count": shard.episode_count,
        "episode_ids": episode_ids,
        "fields": {name: f"{crcs[name]:08x}" for name in CHECKSUM_FIELDS},
    }


# ---------------------------------------------------------------------------
# Manifest: JSON sidecar summarizing shards so queries never touch records.

MANIFEST_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EpisodeMeta:
    """Per-episode manifest row; doubles as the episode ref handed out by queries."""

    shard_path: str
    index: int
    episode_id: str
    family: str
    tier: str
    template_id: int
    seed: int
    variant_tag: str
    final_success: int
    step_count: int
    instruction: str
    embodiment_id: str


@dataclass(frozen=True)
class ShardEntry:
    path: str
    episode_count: int
    episodes: tuple[EpisodeMeta, ...]


@dataclass(frozen=True)
class Manifest:
    dataset_name: str
    schema_version: int
    shards: tuple[ShardEntry, ...]
    family_counts: dict[str, int]
    embodiments: dict[str, dict]

    def all_episodes(self) -> list[EpisodeMeta]:
        return [m for s in self.shards for m in s.episodes]


def _meta_of(ep: Episode, shard_path: str, index: int) -> EpisodeMeta:
    return EpisodeMeta(
        shard_path=shard_path,
        index=index,
        episode_id=ep.episode_id,
        family=ep.task_meta.family,
        tier=ep.task_meta.tier,
        template_id=ep.task_meta.template_id,
        seed=ep.task_meta.seed,
        variant_tag=ep.task_meta.variant_tag,
        final_success=ep.final_success,
        step_count=len(ep.steps),
        instruction=ep.instruction,
        embodiment_id=ep.embodiment.robot_id,
    )


def _embodiment_row(emb: EmbodimentConfig) -> dict:
    return {
        "robot_id": emb.robot_id,
        "dof": emb.dof,
        "gripper": emb.gripper,
        "arm_count": emb.arm_count,
        "joint_limits": [list(pair) for pair in emb.joint_limits],
    }


def build_manifest_from_episodes(
    dataset_name: str, shards: list[tuple[Shard, list[Episode]]]
) -> Manifest:
    """Manifest for shards whose episodes are still in memory (no reread)."""
    entries = []
    family_counts: dict[str, int] = {}
    embodiments: dict[str, dict] = {}
    for shard, episodes in shards:
        metas = []
        for i, ep in enumerate(episodes):
            metas.append(_meta_of(ep, shard.path, i))
            family_counts[ep.task_meta.family] = family_counts.get(ep.task_meta.family, 0) + 1
            embodiments.setdefault(ep.embodiment.robot_id, _embodiment_row(ep.embodiment))
        entries.append(ShardEntry(path=shard.path, episode_count=len(episodes), episodes=tuple(metas)))
    return Manifest(
        dataset_name=dataset_name,
        schema_version=MANIFEST_SCHEMA_VERSION,
        shards=tuple(entries),
        family_counts=family_counts,
        embodiments=embodiments,
    )


def build_manifest(dataset_name: str, shard_paths: list[str | Path]) -> Manifest:
    """Manifest by scanning shard files (decodes every record once)."""
    pairs = []
    for p in shard_paths:
        shard = open_shard(p)
        episodes = [read_episode(shard, i) for i in range(shard.episode_count)]
        pairs.append((shard, episodes))
    return build_manifest_from_episodes(dataset_name, pairs)


def manifest_path(dataset_name: str, directory: str | Path) -> Path:
    return Path(directory) / f"{dataset_name}.manifest.json"


def save_manifest(manifest: Manifest, path: str | Path) -> Path:
    path = Path(path)
    doc = {
        "dataset_name": manifest.dataset_name,
        "schema_version": manifest.schema_version,
        "shards": [
            {
                "path": s.path,
                "episode_count": s.episode_count,
                "episodes": [
                    {k: v for k, v in asdict(m).items() if k != "shard_path"}
                    for m in s.episodes
                ],
            }
            for s in manifest.shards
        ],
        "family_counts": manifest.family_counts,
        "embodiments": manifest.embodiments,
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
    return path


def load_manifest(path: str | Path) -> Manifest:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise FormatVersionUnsupported(f"manifest schema {doc.get('schema_version')}")
    shards = []
    for s in doc["shards"]:
        metas = tuple(
            EpisodeMeta(shard_path=s["path"], index=row["index"], **{
                k: row[k]
                for k in (
                    "episode_id",
                    "family",
                    "tier",
                    "template_id",
                    "seed",
                    "variant_tag",
                    "final_success",
                    "step_count",
                    "instruction",
                    "embodiment_id",
                )
            })
            for row in s["episodes"]
        )
        shards.append(ShardEntry(path=s["path"], episode_count=s["episode_count"], episodes=metas))
    return Manifest(
        dataset_name=doc["dataset_name"],
        schema_version=doc["schema_version"],
        shards=tuple(shards),
        family_counts={k: int(v) for k, v in doc["family_counts"].items()},
        embodiments=doc["embodiments"],
    )


def check_manifest(manifest: Manifest) -> list[IntegrityFailure]:
    """Internal-consistency check: counts add up, embodiment ids resolve."""
    failures: list[IntegrityFailure] = []
    seen: dict[str, int] = {}
    for s in manifest.shards:
        if len(s.episodes) != s.episode_count:
            failures.append(
                IntegrityFailure("COUNT_MISMATCH", f"{s.path}: {len(s.episodes)} rows vs {s.episode_count}")
            )
        for m in s.episodes:
            seen[m.family] = seen.get(m.family, 0) + 1
            if m.embodiment_id not in manifest.embodiments:
                failures.append(
                    IntegrityFailure("UNKNOWN_EMBODIMENT", f"{m.episode_id}: {m.embodiment_id}")
                )
    if seen != manifest.family_counts:
        failures.append(
            IntegrityFailure("COUNT_MISMATCH", f"family counts {manifest.family_counts} vs rows {seen}")
        )
    return failures
