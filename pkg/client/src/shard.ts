/** Read-only shard access: episode decoding, integrity checks, field CRCs.
 *
 * File layout (little-endian throughout):
 *
 *     header   := magic "NEBS" | u16 format_version | u64 episode_count
 *     records  := episode_count x (u32 payload_len | payload)
 *     index    := episode_count x (u64 offset | u64 length | u32 crc32c)
 *     footer   := u64 index_offset
 *
 * Every record's CRC covers its length prefix plus payload. The payload
 * encoding is the writer's: length-prefixed UTF-8 strings, fixed-width
 * integers, f64 numerics, and raw image blobs sorted by (camera, modality).
 */
import * as fs from "node:fs";

import { crc32c } from "./crc32c";
import {
  CAMERA_IDS,
  EpisodeRecord,
  EpisodeStep,
  GRIPPER_TYPES,
  ImageView,
  MODALITIES,
} from "./types";

export const MAGIC = "NEBS";
export const FORMAT_VERSION = 1;

const HEADER_SIZE = 14;
const INDEX_ENTRY_SIZE = 20;
const FOOTER_SIZE = 8;

export class ShardFormatError extends Error {}
export class FormatVersionUnsupported extends Error {}
export class ChecksumMismatch extends Error {}
export class IndexOutOfRange extends Error {}

export interface IndexEntry {
  offset: number;
  length: number;
  crc32c: number;
}

export interface Shard {
  path: string;
  formatVersion: number;
  episodeCount: number;
  index: IndexEntry[];
}

function u64At(buf: Buffer, offset: number, what: string): number {
  const value = buf.readBigUInt64LE(offset);
  if (value > BigInt(Number.MAX_SAFE_INTEGER)) {
    throw new ShardFormatError(`${what} ${value} exceeds safe integer range`);
  }
  return Number(value);
}

class Cursor {
  pos = 0;

  constructor(private buf: Buffer) {}

  take(n: number): Buffer {
    const end = this.pos + n;
    if (end > this.buf.length) {
      throw new ShardFormatError(`record truncated: wanted ${n} bytes at ${this.pos}`);
    }
    const out = this.buf.subarray(this.pos, end);
    this.pos = end;
    return out;
  }

  u8(): number {
    return this.take(1).readUInt8(0);
  }

  u16(): number {
    return this.take(2).readUInt16LE(0);
  }

  u32(): number {
    return this.take(4).readUInt32LE(0);
  }

  u64(what: string): number {
    return u64At(this.take(8), 0, what);
  }

  f64(): number {
    return this.take(8).readDoubleLE(0);
  }

  f64s(n: number): Float64Array {
    const raw = this.take(8 * n);
    const out = new Float64Array(n);
    for (let i = 0; i < n; i++) {
      out[i] = raw.readDoubleLE(8 * i);
    }
    return out;
  }

  text(): string {
    return this.take(this.u32()).toString("utf-8");
  }

  get exhausted(): boolean {
    return this.pos === this.buf.length;
  }
}

export function decodeEpisode(payload: Buffer): EpisodeRecord {
  const r = new Cursor(payload);
  const episodeId = r.text();
  const instruction = r.text();
  const robotId = r.text();
  const dof = r.u16();
  const gripperIx = r.u8();
  const armCount = r.u16();
  if (gripperIx >= GRIPPER_TYPES.length) {
    throw new ShardFormatError(`gripper index ${gripperIx} out of range`);
  }
  const jointLimits: Array<[number, number]> = [];
  for (let i = 0; i < dof; i++) {
    jointLimits.push([r.f64(), r.f64()]);
  }
  const family = r.text();
  const tier = r.text();
  const templateId = r.u32();
  const seed = r.u64("seed");
  const variantTag = r.text();
  const finalSuccess = r.u8();
  const stepCount = r.u32();
  const steps: EpisodeStep[] = [];
  for (let s = 0; s < stepCount; s++) {
    const index = r.u32();
    const success = r.u8();
    const action = r.f64s(r.u16());
    const t = r.u32();
    const wallTime = r.f64();
    const q = r.f64s(r.u16());
    const qDot = r.f64s(r.u16());
    const viewCount = r.u8();
    const views: ImageView[] = [];
    for (let v = 0; v < viewCount; v++) {
      const camIx = r.u8();
      const modIx = r.u8();
      const width = r.u16();
      const height = r.u16();
      const nbytes = r.u32();
      if (camIx >= CAMERA_IDS.length || modIx >= MODALITIES.length) {
        throw new ShardFormatError(`view ids out of range: camera ${camIx}, modality ${modIx}`);
      }
      views.push({
        cameraId: CAMERA_IDS[camIx],
        modality: MODALITIES[modIx],
        width,
        height,
        data: Buffer.from(r.take(nbytes)),
      });
    }
    steps.push({ index, success, action, t, wallTime, q, qDot, views });
  }
  if (!r.exhausted) {
    throw new ShardFormatError(`${payload.length - r.pos} trailing bytes after record`);
  }
  return {
    episodeId,
    instruction,
    embodiment: {
      robotId,
      dof,
      gripper: GRIPPER_TYPES[gripperIx],
      armCount,
      jointLimits,
    },
    taskMeta: { family, tier, templateId, seed, variantTag },
    finalSuccess,
    steps,
  };
}

function readAt(fd: number, offset: number, length: number, path: string): Buffer {
  const buf = Buffer.alloc(length);
  const got = fs.readSync(fd, buf, 0, length, offset);
  if (got !== length) {
    throw new ShardFormatError(`${path}: short read at ${offset}`);
  }
  return buf;
}

export function openShard(path: string): Shard {
  const fd = fs.openSync(path, "r");
  try {
    const size = fs.fstatSync(fd).size;
    if (size < HEADER_SIZE + FOOTER_SIZE) {
      throw new ShardFormatError(`${path}: too short for a shard`);
    }
    const head = readAt(fd, 0, HEADER_SIZE, path);
    if (head.toString("latin1", 0, 4) !== MAGIC) {
      throw new ShardFormatError(`${path}: bad magic`);
    }
    const version = head.readUInt16LE(4);
    if (version !== FORMAT_VERSION) {
      throw new FormatVersionUnsupported(`${path}: format version ${version}`);
    }
    const count = u64At(head, 6, "episode count");
    const footer = readAt(fd, size - FOOTER_SIZE, FOOTER_SIZE, path);
    const indexOffset = u64At(footer, 0, "index offset");
    const indexBytes = count * INDEX_ENTRY_SIZE;
    if (indexOffset < HEADER_SIZE || indexOffset + indexBytes + FOOTER_SIZE > size) {
      throw new ShardFormatError(`${path}: index region out of bounds`);
    }
    const raw = readAt(fd, indexOffset, indexBytes, path);
    const index: IndexEntry[] = [];
    for (let i = 0; i < count; i++) {
      const base = i * INDEX_ENTRY_SIZE;
      index.push({
        offset: u64At(raw, base, "record offset"),
        length: u64At(raw, base + 8, "record length"),
        crc32c: raw.readUInt32LE(base + 16),
      });
    }
    return { path, formatVersion: version, episodeCount: count, index };
  } finally {
    fs.closeSync(fd);
  }
}

export function readEpisodeAt(shard: Shard, i: number): EpisodeRecord {
  if (i < 0 || i >= shard.episodeCount) {
    throw new IndexOutOfRange(`episode ${i} of ${shard.episodeCount}`);
  }
  const entry = shard.index[i];
  const fd = fs.openSync(shard.path, "r");
  let record: Buffer;
  try {
    record = readAt(fd, entry.offset, entry.length, shard.path);
  } finally {
    fs.closeSync(fd);
  }
  const actual = crc32c(record);
  if (actual !== entry.crc32c) {
    throw new ChecksumMismatch(
      `record ${i}: crc32c ${actual.toString(16)} != index ${entry.crc32c.toString(16)}`,
    );
  }
  const payloadLen = record.readUInt32LE(0);
  if (payloadLen !== entry.length - 4) {
    throw new ChecksumMismatch(`record ${i}: length prefix disagrees with index`);
  }
  return decodeEpisode(record.subarray(4));
}

/** Iterate a whole shard; each record is CRC-verified before it is decoded. */
export function* readShard(path: string): Generator<EpisodeRecord> {
  const shard = openShard(path);
  for (let i = 0; i < shard.episodeCount; i++) {
    yield readEpisodeAt(shard, i);
  }
}

export const CHECKSUM_FIELDS = [
  "episode_id",
  "instruction",
  "task_meta",
  "final_success",
  "actions",
  "q",
  "q_dot",
  "success_flags",
  "images",
] as const;

export interface ChecksumDocument {
  episode_count: number;
  episode_ids: string[];
  fields: Record<string, string>;
}

function f64Bytes(values: Float64Array): Buffer {
  const out = Buffer.alloc(8 * values.length);
  for (let i = 0; i < values.length; i++) {
    out.writeDoubleLE(values[i], 8 * i);
  }
  return out;
}

// Records store views pre-sorted, but the hash re-sorts so the document only
// depends on content, matching the primary reader.
function viewRank(view: ImageView): number {
  const cameras: readonly string[] = CAMERA_IDS;
  const modalities: readonly string[] = MODALITIES;
  return cameras.indexOf(view.cameraId) * modalities.length + modalities.indexOf(view.modality);
}

/**
 * Running per-field CRCs over every episode, in shard order.
 *
 * Independent readers of the same shard must produce the same document:
 * floats hash as little-endian 64-bit encodings, images as raw bytes in
 * (camera, modality) order, task_meta as a '|'-joined line.
 */
export function fieldChecksums(path: string): ChecksumDocument {
  const shard = openShard(path);
  const crcs: Record<string, number> = {};
  for (const name of CHECKSUM_FIELDS) {
    crcs[name] = 0;
  }
  const episodeIds: string[] = [];
  for (let i = 0; i < shard.episodeCount; i++) {
    const ep = readEpisodeAt(shard, i);
    episodeIds.push(ep.episodeId);
    const meta = ep.taskMeta;
    const metaLine = `${meta.family}|${meta.tier}|${meta.templateId}|${meta.seed}|${meta.variantTag}`;
    crcs.episode_id = crc32c(Buffer.from(ep.episodeId, "utf-8"), crcs.episode_id);
    crcs.instruction = crc32c(Buffer.from(ep.instruction, "utf-8"), crcs.instruction);
    crcs.task_meta = crc32c(Buffer.from(metaLine, "utf-8"), crcs.task_meta);
    crcs.final_success = crc32c(Buffer.from([ep.finalSuccess]), crcs.final_success);
    for (const step of ep.steps) {
      crcs.actions = crc32c(f64Bytes(step.action), crcs.actions);
      crcs.q = crc32c(f64Bytes(step.q), crcs.q);
      crcs.q_dot = crc32c(f64Bytes(step.qDot), crcs.q_dot);
      crcs.success_flags = crc32c(Buffer.from([step.success]), crcs.success_flags);
      for (const view of [...step.views].sort((a, b) => viewRank(a) - viewRank(b))) {
        crcs.images = crc32c(view.data, crcs.images);
      }
    }
  }
  const fields: Record<string, string> = {};
  for (const name of CHECKSUM_FIELDS) {
    fields[name] = crcs[name].toString(16).padStart(8, "0");
  }
  return { episode_count: shard.episodeCount, episode_ids: episodeIds, fields };
}
