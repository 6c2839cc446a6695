/** CRC32C (Castagnoli), reflected polynomial 0x82F63B78, table-driven.
 *
 * Check value: crc32c of the ASCII bytes "123456789" is 0xE3069283. Results
 * are unsigned 32-bit so they can be compared and hex-formatted directly.
 */

const TABLE = (() => {
  const poly = 0x82f63b78;
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? (c >>> 1) ^ poly : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32c(data: Uint8Array, crc = 0): number {
  let c = ~crc >>> 0;
  for (let i = 0; i < data.length; i++) {
    c = (TABLE[(c ^ data[i]) & 0xff] ^ (c >>> 8)) >>> 0;
  }
  return ~c >>> 0;
}
