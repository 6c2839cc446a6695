/** Print the field-checksum document for a shard as JSON on stdout.
 *
 * The output must match what the primary reader reports for the same file;
 * diffing the two documents is the cross-implementation conformance check.
 */
import { fieldChecksums } from "../src/index";

const path = process.argv[2];
if (!path) {
  process.stderr.write("usage: shard_checksums <shard-file>\n");
  process.exit(2);
}

try {
  process.stdout.write(JSON.stringify(fieldChecksums(path)) + "\n");
} catch (err) {
  process.stderr.write(`${err}\n`);
  process.exit(1);
}
