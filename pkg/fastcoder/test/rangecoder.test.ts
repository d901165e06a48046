import { describe, expect, it } from "vitest";

import { decode, encode, packTables } from "../src/backend";
import { CoderError, RangeDecoder, RangeEncoder, TOTAL } from "../src/rangecoder";
import { selftest } from "../src/selftest";
import { mulberry32, randomTable } from "./util";

describe("golden conformance vectors", () => {
  it("every shipped vector encodes and decodes byte-identically", () => {
    const report = selftest();
    for (const r of report.results) {
      expect(r.pass, `${r.name}: ${r.detail ?? ""}`).toBe(true);
    }
    expect(report.all_pass).toBe(true);
    expect(report.conformance_version).toBe(1);
  });

  it("a corrupted vector is reported as a failure, not a crash", () => {
    const report = selftest();
    const healthy = report.results.filter((r) => r.name !== "conformance_version");
    expect(healthy.length).toBeGreaterThan(0);
    // corrupt a copy of the first case
    const fs = require("fs");
    const path = require("path");
    const os = require("os");
    const src = JSON.parse(fs.readFileSync(report.fixtures, "utf-8"));
    src.cases[2].bytes_hex = "00" + src.cases[2].bytes_hex.slice(2);
    const tmp = path.join(os.tmpdir(), "corrupt_cases.json");
    fs.writeFileSync(tmp, JSON.stringify(src));
    const bad = selftest(tmp);
    expect(bad.all_pass).toBe(false);
    expect(bad.results.filter((r) => !r.pass).length).toBe(1);
  });
});

describe("roundtrip properties", () => {
  it("random tables and symbols roundtrip exactly (alphabets 2..4096)", () => {
    const rand = mulberry32(0xabcdef);
    for (let trial = 0; trial < 200; trial++) {
      const nTables = 1 + Math.floor(rand() * 3);
      const tables: Uint32Array[] = [];
      for (let t = 0; t < nTables; t++) {
        const alphabet = 2 + Math.floor(rand() * 4095);
        tables.push(randomTable(rand, alphabet));
      }
      const n = Math.floor(rand() * 300);
      const idx = new Uint32Array(n);
      const syms = new Int32Array(n);
      for (let i = 0; i < n; i++) {
        idx[i] = Math.floor(rand() * nTables);
        syms[i] = Math.floor(rand() * (tables[idx[i]].length - 1));
      }
      const packed = packTables(tables);
      const bytes = encode(syms, packed, idx);
      const back = decode(bytes, packed, idx);
      expect(Array.from(back)).toEqual(Array.from(syms));
    }
  });

  it("handles a 100k-symbol stream", () => {
    const rand = mulberry32(7);
    const table = randomTable(rand, 257);
    const n = 100_000;
    const idx = new Uint32Array(n);
    const syms = new Int32Array(n);
    for (let i = 0; i < n; i++) {
      syms[i] = Math.floor(rand() * 256);
    }
    const packed = packTables([table]);
    const back = decode(encode(syms, packed, idx), packed, idx);
    expect(Buffer.from(back.buffer).equals(Buffer.from(syms.buffer))).toBe(true);
  });

  it("empty stream is flush-only", () => {
    const packed = packTables([randomTable(mulberry32(1), 4)]);
    const bytes = encode(new Int32Array(0), packed, new Uint32Array(0));
    expect(bytes.length).toBe(4);
  });

  it("rejects out-of-support symbols and truncated streams", () => {
    const rand = mulberry32(3);
    const packed = packTables([randomTable(rand, 8)]);
    expect(() => encode(Int32Array.from([9]), packed, Uint32Array.from([0]))).toThrow(CoderError);
    const idx = new Uint32Array(50);
    const syms = new Int32Array(50).map(() => 3);
    const bytes = encode(syms, packed, idx);
    expect(() => decode(bytes.subarray(0, 3), packed, idx)).toThrow(CoderError);
  });
});

describe("session isolation", () => {
  it("interleaved sessions produce the same bytes as isolated ones", () => {
    const rand = mulberry32(11);
    const table = randomTable(rand, 64);
    const symsA = Array.from({ length: 80 }, () => Math.floor(rand() * 63));
    const symsB = Array.from({ length: 80 }, () => Math.floor(rand() * 63));
    const a1 = new RangeEncoder();
    const b1 = new RangeEncoder();
    for (let i = 0; i < symsA.length; i++) {
      a1.encodeSymbol(table, symsA[i]);
      b1.encodeSymbol(table, symsB[i]);
    }
    const packed = packTables([table]);
    const isolatedA = encode(Int32Array.from(symsA), packed, new Uint32Array(80));
    const isolatedB = encode(Int32Array.from(symsB), packed, new Uint32Array(80));
    expect(Buffer.from(a1.flush()).equals(Buffer.from(isolatedA))).toBe(true);
    expect(Buffer.from(b1.flush()).equals(Buffer.from(isolatedB))).toBe(true);
    const dec = new RangeDecoder(isolatedA);
    expect(symsA.map(() => dec.decodeSymbol(table))).toEqual(symsA);
  });
});
