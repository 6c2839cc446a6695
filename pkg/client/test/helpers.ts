/** Builders shared by the protocol tests: synthetic OBS payloads and the
 * embodiment document the harness sends in HELLO.
 */
import { canonJson } from "../src/framing";
import { CAMERA_IDS, MODALITIES, MODALITY_STRIDE } from "../src/types";

export const EMBODIMENT_DOC = {
  robot_id: "desk-arm",
  dof: 6,
  gripper: "parallel_jaw",
  arm_count: 1,
  joint_limits: Array.from({ length: 6 }, () => [-3.1, 3.1] as [number, number]),
};

/** Binary OBS payload with deterministic pixel patterns per (camera, modality). */
export function synthObservation(dof = 6, width = 2, height = 2, t = 3, wallTime = 0.15): Buffer {
  const cameras: Array<Record<string, string | number>> = [];
  const blobs: Buffer[] = [];
  CAMERA_IDS.forEach((cameraId, ci) => {
    MODALITIES.forEach((modality, mi) => {
      const nbytes = width * height * MODALITY_STRIDE[modality];
      const blob = Buffer.alloc(nbytes);
      for (let k = 0; k < nbytes; k++) {
        blob[k] = (ci * 31 + mi * 7 + k) & 0xff;
      }
      cameras.push({ camera_id: cameraId, modality, width, height, nbytes });
      blobs.push(blob);
    });
  });
  const header = Buffer.from(
    canonJson({ t, wall_time: wallTime, dof, cameras }),
    "utf-8",
  );
  const head = Buffer.alloc(4);
  head.writeUInt32LE(header.length, 0);
  const tail = Buffer.alloc(2 * 8 * dof);
  for (let i = 0; i < dof; i++) {
    tail.writeDoubleLE(0.1 * (i + 1), 8 * i);
    tail.writeDoubleLE(-0.01 * (i + 1), 8 * (dof + i));
  }
  return Buffer.concat([head, header, ...blobs, tail]);
}
