/** Reference bridge child: replies to every observation with one constant
 * action vector. With --malformed it drops the gripper slot instead, which a
 * conforming harness must reject with ERR MalformedAction.
 */
import { runClient } from "../src/index";

const malformed = process.argv.includes("--malformed");

runClient({
  policyId: malformed ? "constant-malformed" : "constant",
  onReset() {},
  onObserve(obs) {
    const n = malformed ? obs.q.length : obs.q.length + 1;
    return new Array(n).fill(0.1);
  },
})
  .then((stats) => {
    process.stderr.write(`session done: ${stats.resets} resets, ${stats.actions} actions\n`);
  })
  .catch((err) => {
    process.stderr.write(`${err}\n`);
    process.exit(1);
  });
