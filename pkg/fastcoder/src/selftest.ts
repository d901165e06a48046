/**
 * Golden-vector self test: replays the shared conformance fixtures and
 * reports per-vector pass/fail without throwing, so a broken build still
 * produces a usable report.
 */

import * as fs from "fs";
import * as path from "path";

import { CONFORMANCE_VERSION, decode, encode, packTables } from "./backend";

export interface VectorResult {
  name: string;
  pass: boolean;
  detail?: string;
}

export interface SelfTestReport {
  conformance_version: number;
  fixtures: string;
  results: VectorResult[];
  all_pass: boolean;
}

export interface GoldenCase {
  name: string;
  tables: number[][];
  indices: number[];
  symbols: number[];
  bytes_hex: string;
}

export function defaultFixturePath(): string {
  const env = process.env.ROICODEC_GOLDEN;
  if (env) {
    return env;
  }
  // fastcoder/ sits next to fixtures/golden/; this module lives either at
  // fastcoder/src (tests) or fastcoder/dist/src (build)
  const candidates = [
    path.join(__dirname, "..", "..", "fixtures", "golden", "coder_cases.json"),
    path.join(__dirname, "..", "..", "..", "fixtures", "golden", "coder_cases.json"),
  ];
  for (const c of candidates) {
    if (fs.existsSync(c)) {
      return c;
    }
  }
  return candidates[1];
}

export function runCase(c: GoldenCase): VectorResult {
  try {
    const tables = c.tables.map((t) => Uint32Array.from(t));
    const packed = packTables(tables);
    const idx = Uint32Array.from(c.indices);
    const syms = Int32Array.from(c.symbols);
    const expected = Buffer.from(c.bytes_hex, "hex");
    const got = Buffer.from(encode(syms, packed, idx));
    if (!got.equals(expected)) {
      return { name: c.name, pass: false, detail: `encode mismatch (${got.length}B vs ${expected.length}B)` };
    }
    const back = decode(new Uint8Array(expected), packed, idx);
    for (let i = 0; i < syms.length; i++) {
      if (back[i] !== syms[i]) {
        return { name: c.name, pass: false, detail: `decode mismatch at ${i}` };
      }
    }
    return { name: c.name, pass: true };
  } catch (err) {
    return { name: c.name, pass: false, detail: String(err) };
  }
}

export function selftest(fixturePath?: string): SelfTestReport {
  const file = fixturePath ?? defaultFixturePath();
  const payload = JSON.parse(fs.readFileSync(file, "utf-8"));
  const results: VectorResult[] = [];
  let versionOk = true;
  if (payload.conformance_version !== CONFORMANCE_VERSION) {
    versionOk = false;
    results.push({
      name: "conformance_version",
      pass: false,
      detail: `fixture version ${payload.conformance_version} != build ${CONFORMANCE_VERSION}`,
    });
  }
  for (const c of payload.cases as GoldenCase[]) {
    results.push(runCase(c));
  }
  return {
    conformance_version: CONFORMANCE_VERSION,
    fixtures: file,
    results,
    all_pass: versionOk && results.every((r) => r.pass),
  };
}
