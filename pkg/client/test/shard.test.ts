import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import {
  ChecksumMismatch,
  FormatVersionUnsupported,
  IndexOutOfRange,
  ShardFormatError,
  fieldChecksums,
  openShard,
  readEpisodeAt,
  readShard,
} from "../src/shard";
import { MODALITY_STRIDE } from "../src/types";

const FIXTURES = fileURLToPath(new URL("fixtures/", import.meta.url));
const TINY = path.join(FIXTURES, "tiny.shard");
const EXPECTED = JSON.parse(
  fs.readFileSync(path.join(FIXTURES, "tiny.expected.json"), "utf-8"),
);

function tmpCopy(mutate: (bytes: Buffer) => void): string {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "shard-test-"));
  const bytes = Buffer.from(fs.readFileSync(TINY));
  mutate(bytes);
  const out = path.join(dir, "mutated.shard");
  fs.writeFileSync(out, bytes);
  return out;
}

describe("reading a primary-written shard", () => {
  it("yields every episode with matching metadata", () => {
    const episodes = [...readShard(TINY)];
    expect(episodes.length).toBe(EXPECTED.episodes.length);
    episodes.forEach((ep, i) => {
      const want = EXPECTED.episodes[i];
      expect(ep.episodeId).toBe(want.episode_id);
      expect(ep.instruction).toBe(want.instruction);
      expect(ep.taskMeta.family).toBe(want.family);
      expect(ep.taskMeta.tier).toBe(want.tier);
      expect(ep.taskMeta.templateId).toBe(want.template_id);
      expect(ep.taskMeta.seed).toBe(want.seed);
      expect(ep.finalSuccess).toBe(want.final_success);
      expect(ep.steps.length).toBe(want.step_count);
      expect(ep.embodiment.dof).toBe(want.dof);
      expect(ep.embodiment.robotId).toBe(want.robot_id);
      expect(ep.embodiment.gripper).toBe(want.gripper);
    });
  });

  it("decodes proprioception exactly", () => {
    const episodes = [...readShard(TINY)];
    episodes.forEach((ep, i) => {
      const firstQ = Array.from(ep.steps[0].q);
      expect(firstQ).toEqual(EXPECTED.episodes[i].first_q);
    });
  });

  it("exposes image views with size-consistent blobs", () => {
    for (const ep of readShard(TINY)) {
      for (const step of ep.steps) {
        expect(step.views.length).toBe(EXPECTED.episodes[0].view_count);
        for (const view of step.views) {
          expect(view.data.length).toBe(
            view.width * view.height * MODALITY_STRIDE[view.modality],
          );
        }
      }
    }
  });

  it("reproduces the primary reader's field checksums", () => {
    expect(fieldChecksums(TINY)).toEqual(EXPECTED.checksums);
  });
});

describe("integrity", () => {
  it("rejects a corrupted record byte", () => {
    // Offset 40 sits inside the first record's payload.
    const corrupted = tmpCopy((bytes) => {
      bytes[40] ^= 0x41;
    });
    expect(() => [...readShard(corrupted)]).toThrow(ChecksumMismatch);
  });

  it("rejects an unsupported format version", () => {
    const future = tmpCopy((bytes) => {
      bytes.writeUInt16LE(2, 4);
    });
    expect(() => openShard(future)).toThrow(FormatVersionUnsupported);
  });

  it("rejects bad magic", () => {
    const scrambled = tmpCopy((bytes) => {
      bytes[0] = 0x58;
    });
    expect(() => openShard(scrambled)).toThrow(ShardFormatError);
  });

  it("refuses out-of-range indexes", () => {
    const shard = openShard(TINY);
    expect(() => readEpisodeAt(shard, shard.episodeCount)).toThrow(IndexOutOfRange);
    expect(() => readEpisodeAt(shard, -1)).toThrow(IndexOutOfRange);
  });
});

describe("empty shard", () => {
  it("iterates zero episodes", () => {
    const dir = fs.mkdtempSync(path.join(os.tmpdir(), "shard-test-"));
    // header (magic, version 1, count 0) directly followed by the footer
    // pointing the index at byte 14.
    const bytes = Buffer.alloc(22);
    bytes.write("NEBS", 0, "latin1");
    bytes.writeUInt16LE(1, 4);
    bytes.writeBigUInt64LE(0n, 6);
    bytes.writeBigUInt64LE(14n, 14);
    const out = path.join(dir, "empty.shard");
    fs.writeFileSync(out, bytes);
    expect([...readShard(out)]).toEqual([]);
    expect(openShard(out).episodeCount).toBe(0);
  });
});
