/**
 * Batch coding over flat integer buffers, plus the framed pipe protocol
 * used by the Python bridge. The boundary carries packed CDF tables
 * (offsets + concatenated entries), one table index per symbol, and the
 * symbols/bytes themselves; nothing else crosses it.
 *
 * Request frame (little-endian):
 *   u32 op (0=encode, 1=decode) | u32 nSymbols | u32 nTables | u32 nEntries
 *   u32 offsets[nTables+1] | u32 entries[nEntries] | u32 tableIdx[nSymbols]
 *   op 0: i32 symbols[nSymbols]
 *   op 1: u32 nBytes | u8 bytes[nBytes]
 * Response:
 *   op 0: u32 nBytes | u8 bytes[nBytes]
 *   op 1: i32 symbols[nSymbols]
 */

import { CoderError, RangeDecoder, RangeEncoder, validateCdf } from "./rangecoder";

export const CONFORMANCE_VERSION = 1;

export interface PackedTables {
  offsets: Uint32Array; // nTables + 1 entry offsets
  entries: Uint32Array; // concatenated cumulative tables
}

export function packTables(tables: Uint32Array[]): PackedTables {
  const offsets = new Uint32Array(tables.length + 1);
  let total = 0;
  for (let i = 0; i < tables.length; i++) {
    total += tables[i].length;
    offsets[i + 1] = total;
  }
  const entries = new Uint32Array(total);
  for (let i = 0; i < tables.length; i++) {
    entries.set(tables[i], offsets[i]);
  }
  return { offsets, entries };
}

function tableAt(packed: PackedTables, idx: number): Uint32Array {
  return packed.entries.subarray(packed.offsets[idx], packed.offsets[idx + 1]);
}

export function encode(symbols: Int32Array, packed: PackedTables, tableIdx: Uint32Array): Uint8Array {
  const enc = new RangeEncoder();
  for (let i = 0; i < symbols.length; i++) {
    const cum = tableAt(packed, tableIdx[i]);
    const s = symbols[i];
    if (!(s >= 0 && s < cum.length - 1)) {
      throw new CoderError(`symbol ${s} outside table support`);
    }
    enc.encodeSymbol(cum, s);
  }
  return enc.flush();
}

export function decode(data: Uint8Array, packed: PackedTables, tableIdx: Uint32Array): Int32Array {
  const dec = new RangeDecoder(data);
  const out = new Int32Array(tableIdx.length);
  for (let i = 0; i < tableIdx.length; i++) {
    out[i] = dec.decodeSymbol(tableAt(packed, tableIdx[i]));
  }
  return out;
}

export function validatePacked(packed: PackedTables): void {
  for (let i = 0; i + 1 < packed.offsets.length; i++) {
    validateCdf(tableAt(packed, i));
  }
}

export function handleRequest(payload: Buffer): Buffer {
  if (payload.length < 16) {
    throw new CoderError("short request frame");
  }
  const op = payload.readUInt32LE(0);
  const nSymbols = payload.readUInt32LE(4);
  const nTables = payload.readUInt32LE(8);
  const nEntries = payload.readUInt32LE(12);
  let pos = 16;
  const offsets = new Uint32Array(payload.buffer, payload.byteOffset + pos, nTables + 1).slice();
  pos += 4 * (nTables + 1);
  const entries = new Uint32Array(payload.buffer, payload.byteOffset + pos, nEntries).slice();
  pos += 4 * nEntries;
  const idx = new Uint32Array(payload.buffer, payload.byteOffset + pos, nSymbols).slice();
  pos += 4 * nSymbols;
  const packed = { offsets, entries };
  if (op === 0) {
    const symbols = new Int32Array(payload.buffer, payload.byteOffset + pos, nSymbols).slice();
    const out = encode(symbols, packed, idx);
    const head = Buffer.alloc(4);
    head.writeUInt32LE(out.length, 0);
    return Buffer.concat([head, Buffer.from(out)]);
  }
  if (op === 1) {
    const nBytes = payload.readUInt32LE(pos);
    pos += 4;
    const data = new Uint8Array(payload.buffer, payload.byteOffset + pos, nBytes);
    const out = decode(data, packed, idx);
    return Buffer.from(out.buffer, out.byteOffset, out.byteLength);
  }
  throw new CoderError(`unknown op ${op}`);
}
