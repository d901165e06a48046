/**
 * Paired throughput benchmark: this build vs the Python reference coder
 * on a 10^6-symbol uniform-256 stream. Prints a small table plus the
 * speedup ratio (target: >= 5x).
 */

import { execFileSync } from "child_process";
import * as path from "path";

import { decode, encode, packTables } from "../src/backend";

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const N = 1_000_000;
const rand = mulberry32(2);
const cum = new Uint32Array(257);
for (let i = 0; i <= 256; i++) {
  cum[i] = i * 256;
}
const syms = new Int32Array(N);
for (let i = 0; i < N; i++) {
  syms[i] = Math.floor(rand() * 256);
}
const idx = new Uint32Array(N);
const packed = packTables([cum]);

encode(syms.subarray(0, 10_000), packed, idx.subarray(0, 10_000)); // warm up
let t0 = process.hrtime.bigint();
const bytes = encode(syms, packed, idx);
let t1 = process.hrtime.bigint();
const encSec = Number(t1 - t0) / 1e9;
t0 = process.hrtime.bigint();
decode(bytes, packed, idx);
t1 = process.hrtime.bigint();
const decSec = Number(t0 < t1 ? t1 - t0 : 0n) / 1e9;

const srcPath = path.join(__dirname, "..", "..", "..", "src");
const py = `
import sys, time
sys.path.insert(0, ${JSON.stringify(srcPath)})
import numpy as np
from roicodec.codec import ReferenceBackend
cum = (np.arange(257, dtype=np.uint64) * 256).astype(np.uint32)
rng = np.random.default_rng(2)
syms = rng.integers(0, 256, size=${N}).tolist()
idx = [0] * ${N}
b = ReferenceBackend()
t0 = time.perf_counter(); data = b.encode(syms, [cum], idx); t_enc = time.perf_counter() - t0
t0 = time.perf_counter(); b.decode(data, [cum], idx); t_dec = time.perf_counter() - t0
print(t_enc, t_dec)
`;
const [refEnc, refDec] = execFileSync("python3", ["-c", py], { encoding: "utf-8" })
  .trim()
  .split(/\s+/)
  .map(parseFloat);

console.log(`symbols:            ${N}`);
console.log(`coded size:         ${bytes.length} bytes`);
console.log(`fast encode:        ${encSec.toFixed(3)} s (${(N / encSec / 1e6).toFixed(1)} Msym/s)`);
console.log(`fast decode:        ${decSec.toFixed(3)} s`);
console.log(`reference encode:   ${refEnc.toFixed(3)} s`);
console.log(`reference decode:   ${refDec.toFixed(3)} s`);
console.log(`encode speedup:     ${(refEnc / encSec).toFixed(1)}x (target >= 5x)`);
console.log(`decode speedup:     ${(refDec / decSec).toFixed(1)}x`);
