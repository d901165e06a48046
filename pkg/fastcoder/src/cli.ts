/**
 * CLI entry: `pipe` serves one framed request on stdin and writes the
 * response to stdout (the Python bridge's transport); `selftest` prints
 * the golden-vector report; `version` prints the conformance version.
 */

import { CONFORMANCE_VERSION, handleRequest } from "./backend";
import { selftest } from "./selftest";

function readAllStdin(): Promise<Buffer> {
  return new Promise((resolve, reject) => {
    const chunks: Buffer[] = [];
    process.stdin.on("data", (c) => chunks.push(c));
    process.stdin.on("end", () => resolve(Buffer.concat(chunks)));
    process.stdin.on("error", reject);
  });
}

async function main(): Promise<number> {
  const cmd = process.argv[2];
  if (cmd === "pipe") {
    const req = await readAllStdin();
    process.stdout.write(handleRequest(req));
    return 0;
  }
  if (cmd === "selftest") {
    const report = selftest(process.argv[3]);
    process.stdout.write(JSON.stringify(report, null, 1) + "\n");
    return report.all_pass ? 0 : 1;
  }
  if (cmd === "version") {
    process.stdout.write(String(CONFORMANCE_VERSION) + "\n");
    return 0;
  }
  process.stderr.write("usage: cli.js pipe|selftest [fixtures.json]|version\n");
  return 2;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    process.stderr.write(String(err) + "\n");
    process.exit(1);
  }
);
