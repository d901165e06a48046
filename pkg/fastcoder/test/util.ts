import { TOTAL } from "../src/rangecoder";

/** Deterministic 32-bit PRNG so fuzz cases are reproducible. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Strictly increasing cumulative table summing exactly to 2^16. */
export function randomTable(rand: () => number, alphabet: number): Uint32Array {
  const counts = new Array<number>(alphabet);
  let sum = 0;
  for (let i = 0; i < alphabet; i++) {
    counts[i] = 1 + Math.floor(rand() * 1999);
    sum += counts[i];
  }
  const budget = TOTAL - alphabet;
  let assigned = 0;
  for (let i = 0; i < alphabet; i++) {
    counts[i] = Math.floor((counts[i] * budget) / sum) + 1;
    assigned += counts[i];
  }
  counts[0] += TOTAL - assigned;
  const cum = new Uint32Array(alphabet + 1);
  for (let i = 0; i < alphabet; i++) {
    cum[i + 1] = cum[i] + counts[i];
  }
  return cum;
}
