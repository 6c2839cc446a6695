/** Bridge wire protocol v1: framed messages over an ordered byte stream.
 *
 * frame := u32 LE length | u8 type | payload, where length covers the type
 * byte plus payload. HELLO, RESET, ACT, and ERR carry UTF-8 JSON; OBS is
 * binary: u32 header length, a JSON header listing cameras in order, the raw
 * image blobs in that order, then q and q_dot as little-endian f64.
 */
import { Readable, Writable } from "node:stream";

import { MODALITY_STRIDE, Observation } from "./types";

export const PROTOCOL_VERSION = 1;

export const FRAME_HELLO = 1;
export const FRAME_RESET = 2;
export const FRAME_OBS = 3;
export const FRAME_ACT = 4;
export const FRAME_ERR = 5;
export const FRAME_BYE = 6;

export const FRAME_NAMES: Record<number, string> = {
  [FRAME_HELLO]: "HELLO",
  [FRAME_RESET]: "RESET",
  [FRAME_OBS]: "OBS",
  [FRAME_ACT]: "ACT",
  [FRAME_ERR]: "ERR",
  [FRAME_BYE]: "BYE",
};

export const MAX_FRAME_BYTES = 64 * 1024 * 1024;

export class ProtocolError extends Error {}

/** Raised when the transport closes before a full frame arrives. */
export class StreamClosed extends Error {}

/** Peer sent an ERR frame; carries the decoded error document verbatim. */
export class ServerError extends Error {
  constructor(readonly code: string, readonly detail: string) {
    super(`${code}: ${detail}`);
  }
}

/**
 * JSON with sorted keys and no whitespace, matching the harness encoder so
 * both sides can compare or log payloads byte for byte.
 */
export function canonJson(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonJson).join(",") + "]";
  }
  const obj = value as Record<string, unknown>;
  const parts = Object.keys(obj)
    .sort()
    .map((k) => JSON.stringify(k) + ":" + canonJson(obj[k]));
  return "{" + parts.join(",") + "}";
}

/** Buffers an async stream and hands out exact byte counts. */
export class StreamReader {
  private chunks: Buffer[] = [];
  private buffered = 0;
  private ended = false;
  private wakeup: (() => void) | null = null;

  constructor(input: Readable) {
    input.on("data", (chunk: Buffer) => {
      this.chunks.push(chunk);
      this.buffered += chunk.length;
      this.wake();
    });
    input.on("end", () => {
      this.ended = true;
      this.wake();
    });
    input.on("error", () => {
      this.ended = true;
      this.wake();
    });
  }

  private wake(): void {
    if (this.wakeup) {
      const fn = this.wakeup;
      this.wakeup = null;
      fn();
    }
  }

  async readExact(n: number): Promise<Buffer> {
    while (this.buffered < n) {
      if (this.ended) {
        throw new StreamClosed(`stream closed while waiting for ${n} bytes`);
      }
      await new Promise<void>((resolve) => {
        this.wakeup = resolve;
      });
    }
    const all = this.chunks.length === 1 ? this.chunks[0] : Buffer.concat(this.chunks);
    const rest = all.subarray(n);
    this.chunks = rest.length > 0 ? [rest] : [];
    this.buffered -= n;
    return Buffer.from(all.subarray(0, n));
  }
}

export function frameBytes(type: number, payload: Buffer = Buffer.alloc(0)): Buffer {
  const head = Buffer.alloc(5);
  head.writeUInt32LE(payload.length + 1, 0);
  head.writeUInt8(type, 4);
  return Buffer.concat([head, payload]);
}

export async function readFrame(reader: StreamReader): Promise<{ type: number; payload: Buffer }> {
  const head = await reader.readExact(5);
  const length = head.readUInt32LE(0);
  const type = head.readUInt8(4);
  if (length < 1 || length > MAX_FRAME_BYTES) {
    throw new ProtocolError(`frame length ${length} out of range`);
  }
  if (!(type in FRAME_NAMES)) {
    throw new ProtocolError(`unknown frame type ${type}`);
  }
  return { type, payload: await reader.readExact(length - 1) };
}

export function writeAll(output: Writable, data: Buffer): Promise<void> {
  return new Promise((resolve, reject) => {
    output.write(data, (err) => (err ? reject(err) : resolve()));
  });
}

interface CameraHeader {
  camera_id: string;
  modality: string;
  width: number;
  height: number;
  nbytes: number;
}

export function decodeObservation(payload: Buffer): Observation {
  if (payload.length < 4) {
    throw new ProtocolError("OBS payload too short for header length");
  }
  const headerLen = payload.readUInt32LE(0);
  if (4 + headerLen > payload.length) {
    throw new ProtocolError("OBS header overruns payload");
  }
  let header: { t: number; wall_time: number; dof: number; cameras: CameraHeader[] };
  try {
    header = JSON.parse(payload.subarray(4, 4 + headerLen).toString("utf-8"));
  } catch (err) {
    throw new ProtocolError(`OBS header is not JSON: ${err}`);
  }
  const views = [];
  let offset = 4 + headerLen;
  for (const cam of header.cameras) {
    const data = payload.subarray(offset, offset + cam.nbytes);
    if (data.length !== cam.nbytes) {
      throw new ProtocolError("OBS image blob truncated");
    }
    const expected = cam.width * cam.height * MODALITY_STRIDE[cam.modality];
    if (expected !== cam.nbytes) {
      throw new ProtocolError(
        `OBS blob size ${cam.nbytes} does not match ${cam.width}x${cam.height} ${cam.modality}`,
      );
    }
    views.push({
      cameraId: cam.camera_id,
      modality: cam.modality,
      width: cam.width,
      height: cam.height,
      data: Buffer.from(data),
    });
    offset += cam.nbytes;
  }
  const dof = header.dof;
  const tail = payload.subarray(offset);
  if (tail.length !== 2 * 8 * dof) {
    throw new ProtocolError(`OBS proprioception size ${tail.length} != ${2 * 8 * dof}`);
  }
  const q = new Float64Array(dof);
  const qDot = new Float64Array(dof);
  for (let i = 0; i < dof; i++) {
    q[i] = tail.readDoubleLE(8 * i);
    qDot[i] = tail.readDoubleLE(8 * (dof + i));
  }
  return { t: header.t, wallTime: header.wall_time, q, qDot, views };
}

export function encodeAct(values: number[]): Buffer {
  return Buffer.from(canonJson({ values }), "utf-8");
}

export function parseErr(payload: Buffer): ServerError {
  try {
    const doc = JSON.parse(payload.toString("utf-8"));
    return new ServerError(String(doc.error), String(doc.detail));
  } catch {
    return new ServerError("ERR", payload.toString("utf-8"));
  }
}
