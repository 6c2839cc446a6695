export { crc32c } from "./crc32c";
export {
  FRAME_ACT,
  FRAME_BYE,
  FRAME_ERR,
  FRAME_HELLO,
  FRAME_OBS,
  FRAME_RESET,
  MAX_FRAME_BYTES,
  PROTOCOL_VERSION,
  ProtocolError,
  ServerError,
  StreamClosed,
  StreamReader,
  canonJson,
  decodeObservation,
  encodeAct,
  frameBytes,
  readFrame,
  writeAll,
} from "./framing";
export {
  CHECKSUM_FIELDS,
  ChecksumMismatch,
  FORMAT_VERSION,
  FormatVersionUnsupported,
  IndexOutOfRange,
  MAGIC,
  ShardFormatError,
  decodeEpisode,
  fieldChecksums,
  openShard,
  readEpisodeAt,
  readShard,
} from "./shard";
export type { ChecksumDocument, IndexEntry, Shard } from "./shard";
export { runClient } from "./client";
export type { ClientCallbacks, SessionStats } from "./client";
export * from "./types";
