/** Shared domain types plus the fixed id tables the binary formats index into.
 *
 * The tuples must match the writer side byte for byte: shard records and OBS
 * frames store cameras, modalities, and grippers as indices into these lists.
 */

export const CAMERA_IDS = ["front", "back", "left", "right", "top", "wrist"] as const;
export const MODALITIES = ["rgb", "depth", "segmentation"] as const;
export const GRIPPER_TYPES = ["parallel_jaw", "suction", "none"] as const;

/** Bytes per pixel for each modality; blob sizes are width * height * stride. */
export const MODALITY_STRIDE: Record<string, number> = {
  rgb: 3,
  depth: 4,
  segmentation: 2,
};

export interface ImageView {
  cameraId: string;
  modality: string;
  width: number;
  height: number;
  data: Buffer;
}

export interface Observation {
  t: number;
  wallTime: number;
  q: Float64Array;
  qDot: Float64Array;
  views: ImageView[];
}

export interface EmbodimentConfig {
  robotId: string;
  dof: number;
  gripper: string;
  armCount: number;
  jointLimits: Array<[number, number]>;
}

export interface TaskMeta {
  family: string;
  tier: string;
  templateId: number;
  seed: number;
  variantTag: string;
}

export interface EpisodeStep {
  index: number;
  success: number;
  action: Float64Array;
  t: number;
  wallTime: number;
  q: Float64Array;
  qDot: Float64Array;
  views: ImageView[];
}

export interface EpisodeRecord {
  episodeId: string;
  instruction: string;
  embodiment: EmbodimentConfig;
  taskMeta: TaskMeta;
  finalSuccess: number;
  steps: EpisodeStep[];
}
