/** Child-side bridge session: HELLO -> (RESET -> (OBS -> ACT)*)* -> BYE.
 *
 * The process is spawned by the harness with the protocol on stdio. Policy
 * authors supply two callbacks; everything else (framing, handshake, array
 * decoding) happens here. A server ERR aborts the loop by throwing, carrying
 * the server's error document.
 */
import { Readable, Writable } from "node:stream";

import {
  FRAME_ACT,
  FRAME_BYE,
  FRAME_ERR,
  FRAME_HELLO,
  FRAME_NAMES,
  FRAME_OBS,
  FRAME_RESET,
  PROTOCOL_VERSION,
  ProtocolError,
  StreamReader,
  canonJson,
  decodeObservation,
  encodeAct,
  frameBytes,
  parseErr,
  readFrame,
  writeAll,
} from "./framing";
import { EmbodimentConfig, Observation } from "./types";

export interface ClientCallbacks {
  policyId?: string;
  /** Reported to the harness resource probe when set. */
  artifactBytes?: number;
  acceleratorMemBytes?: number;
  onReset(instruction: string, embodiment: EmbodimentConfig): void;
  /** Must return the action values; the embodiment wants dof + 1 of them. */
  onObserve(observation: Observation): number[];
}

export interface SessionStats {
  resets: number;
  actions: number;
}

interface EmbodimentDoc {
  robot_id: string;
  dof: number;
  gripper: string;
  arm_count: number;
  joint_limits: Array<[number, number]>;
}

function embodimentFromDoc(doc: EmbodimentDoc): EmbodimentConfig {
  return {
    robotId: doc.robot_id,
    dof: doc.dof,
    gripper: doc.gripper,
    armCount: doc.arm_count,
    jointLimits: doc.joint_limits.map(([lo, hi]) => [lo, hi]),
  };
}

/**
 * Serve one session over the given streams (stdio by default). Resolves with
 * session counts after a clean BYE; rejects on ERR or protocol trouble.
 */
export async function runClient(
  callbacks: ClientCallbacks,
  input: Readable = process.stdin,
  output: Writable = process.stdout,
): Promise<SessionStats> {
  const reader = new StreamReader(input);
  const stats: SessionStats = { resets: 0, actions: 0 };

  const hello = await readFrame(reader);
  if (hello.type === FRAME_ERR) {
    throw parseErr(hello.payload);
  }
  if (hello.type !== FRAME_HELLO) {
    throw new ProtocolError(`expected HELLO, got ${FRAME_NAMES[hello.type]}`);
  }
  const greeting = JSON.parse(hello.payload.toString("utf-8"));
  if (greeting.protocol_version !== PROTOCOL_VERSION) {
    throw new ProtocolError(`unsupported protocol version ${greeting.protocol_version}`);
  }
  const embodiment = embodimentFromDoc(greeting.embodiment);
  const reply: Record<string, unknown> = {
    protocol_version: PROTOCOL_VERSION,
    policy_id: callbacks.policyId ?? "external",
    dof: embodiment.dof,
  };
  if (callbacks.artifactBytes !== undefined) {
    reply.artifact_bytes = callbacks.artifactBytes;
  }
  if (callbacks.acceleratorMemBytes !== undefined) {
    reply.accelerator_mem_bytes = callbacks.acceleratorMemBytes;
  }
  await writeAll(output, frameBytes(FRAME_HELLO, Buffer.from(canonJson(reply), "utf-8")));

  for (;;) {
    const frame = await readFrame(reader);
    if (frame.type === FRAME_RESET) {
      const doc = JSON.parse(frame.payload.toString("utf-8"));
      callbacks.onReset(doc.instruction, embodiment);
      stats.resets += 1;
    } else if (frame.type === FRAME_OBS) {
      if (stats.resets === 0) {
        throw new ProtocolError("OBS before any RESET");
      }
      const action = callbacks.onObserve(decodeObservation(frame.payload));
      await writeAll(output, frameBytes(FRAME_ACT, encodeAct(action)));
      stats.actions += 1;
    } else if (frame.type === FRAME_BYE) {
      await writeAll(output, frameBytes(FRAME_BYE));
      return stats;
    } else if (frame.type === FRAME_ERR) {
      throw parseErr(frame.payload);
    } else {
      throw new ProtocolError(`unexpected ${FRAME_NAMES[frame.type]} frame mid-session`);
    }
  }
}
