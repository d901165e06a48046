/**
 * Byte-compatible range coder: 32-bit state, 16-bit probabilities,
 * carry-less renormalization. Must produce bit-identical output to the
 * reference implementation for every input (see docs/bitstream.md in the
 * main package for the normative algorithm).
 *
 * All arithmetic stays below 2^53 so plain doubles are exact; JS 32-bit
 * bitwise operators are avoided on values that can reach 2^32.
 */

export const PROB_BITS = 16;
export const TOTAL = 1 << PROB_BITS;
export const TOP = 1 << 24;
export const BOT = 1 << 16;
export const FLUSH_BYTES = 4;
const M32 = 0x100000000; // 2^32
const M24 = 0x1000000; // 2^24

export class CoderError extends Error {}

export class RangeEncoder {
  private low = 0;
  private range = M32 - 1;
  private out: number[] = [];

  encode(cumLo: number, cumHi: number): void {
    if (!(cumLo >= 0 && cumLo < cumHi && cumHi <= TOTAL)) {
      throw new CoderError(`bad interval [${cumLo}, ${cumHi})`);
    }
    const r = Math.floor(this.range / TOTAL);
    this.low += r * cumLo;
    this.range = r * (cumHi - cumLo);
    this.normalize();
  }

  encodeSymbol(cum: Uint32Array, index: number): void {
    this.encode(cum[index], cum[index + 1]);
  }

  private normalize(): void {
    for (;;) {
      const hi = this.low + this.range;
      if (Math.floor(this.low / M24) === Math.floor(hi / M24)) {
        // settled top byte: emit it
      } else if (this.range < BOT) {
        // carry-less underflow clamp to the next 16-bit boundary
        this.range = (M32 - (this.low % M32)) % BOT;
      } else {
        break;
      }
      this.out.push(Math.floor(this.low / M24) % 256);
      this.low = (this.low % M24) * 256;
      this.range = this.range * 256;
    }
  }

  flush(): Uint8Array {
    for (let i = 0; i < FLUSH_BYTES; i++) {
      this.out.push(Math.floor(this.low / M24) % 256);
      this.low = (this.low % M24) * 256;
    }
    return Uint8Array.from(this.out);
  }
}

export class RangeDecoder {
  private low = 0;
  private range = M32 - 1;
  private code = 0;
  private pos = 0;

  constructor(private data: Uint8Array) {
    for (let i = 0; i < FLUSH_BYTES; i++) {
      this.code = (this.code % M24) * 256 + this.nextByte();
    }
  }

  private nextByte(): number {
    if (this.pos >= this.data.length) {
      throw new CoderError("truncated range-coded stream");
    }
    return this.data[this.pos++];
  }

  decodeValue(): number {
    const r = Math.floor(this.range / TOTAL);
    const dv = Math.floor((this.code - this.low) / r);
    return Math.min(dv, TOTAL - 1);
  }

  consume(cumLo: number, cumHi: number): void {
    const r = Math.floor(this.range / TOTAL);
    this.low += r * cumLo;
    this.range = r * (cumHi - cumLo);
    for (;;) {
      const hi = this.low + this.range;
      if (Math.floor(this.low / M24) === Math.floor(hi / M24)) {
        // shift
      } else if (this.range < BOT) {
        this.range = (M32 - (this.low % M32)) % BOT;
      } else {
        break;
      }
      this.code = (this.code % M24) * 256 + this.nextByte();
      this.low = (this.low % M24) * 256;
      this.range = this.range * 256;
    }
  }

  decodeSymbol(cum: Uint32Array): number {
    const dv = this.decodeValue();
    let lo = 0;
    let hi = cum.length - 1;
    while (hi - lo > 1) {
      const mid = (lo + hi) >> 1;
      if (cum[mid] > dv) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    this.consume(cum[lo], cum[lo + 1]);
    return lo;
  }
}

export function validateCdf(cum: Uint32Array): void {
  if (cum.length < 2 || cum[0] !== 0 || cum[cum.length - 1] !== TOTAL) {
    throw new CoderError("cdf must run from 0 to 2^16");
  }
  for (let i = 1; i < cum.length; i++) {
    if (cum[i] <= cum[i - 1]) {
      throw new CoderError("cdf must be strictly increasing");
    }
  }
}
