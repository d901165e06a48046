"""Reference range coder: 32-bit state, 16-bit probabilities, carry-less.

This is the normative implementation; docs/bitstream.md specifies the
algorithm so alternate backends can be byte-compatible. Cumulative
frequency tables are integer arrays with first entry 0 and last entry
TOTAL = 2**16, strictly increasing.

The coder never carries: after each symbol, low + range <= 2**32 holds
because range is first divided by the table total. Renormalization emits
the top byte whenever it is settled, and clamps the range to the next
16-bit boundary when it underflows.
"""

from __future__ import annotations

import numpy as np

PROB_BITS = 16
TOTAL = 1 << PROB_BITS
TOP = 1 << 24
BOT = 1 << 16
MASK32 = 0xFFFFFFFF
FLUSH_BYTES = 4


class CoderError(ValueError):
    """Raised on invalid tables, out-of-support symbols or truncated data."""


def validate_cdf(cum) -> np.ndarray:
    cum = np.asarray(cum, dtype=np.uint32)
    if cum.ndim != 1 or cum.size < 2:
        raise CoderError("cdf must be a 1-D array with at least 2 entries")
    if cum[0] != 0 or cum[-1] != TOTAL:
        raise CoderError(f"cdf must start at 0 and end at {TOTAL}")
    if not np.all(np.diff(cum.astype(np.int64)) > 0):
        raise CoderError("cdf must be strictly increasing")
    return cum


class RangeEncoder:
    """Incremental encoder; feed (cum_lo, cum_hi) intervals, then flush."""

    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.out = bytearray()

    def encode(self, cum_lo: int, cum_hi: int) -> None:
        if not (0 <= cum_lo < cum_hi <= TOTAL):
            raise CoderError(f"bad interval [{cum_lo}, {cum_hi})")
        r = self.range >> PROB_BITS
        self.low += r * cum_lo
        self.range = r * (cum_hi - cum_lo)
        self._normalize()

    def encode_symbol(self, cum: np.ndarray, symbol_index: int) -> None:
        self.encode(int(cum[symbol_index]), int(cum[symbol_index + 1]))

    def _normalize(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) < TOP:
                pass
            elif self.range < BOT:
                self.range = (-self.low) & (BOT - 1)
            else:
                break
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & MASK32
            self.range = (self.range << 8) & MASK32

    def flush(self) -> bytes:
        for _ in range(FLUSH_BYTES):
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & MASK32
        return bytes(self.out)


class RangeDecoder:
    """Incremental decoder over a byte buffer produced by RangeEncoder."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = MASK32
        self.code = 0
        for _ in range(FLUSH_BYTES):
            self.code = ((self.code << 8) | self._next_byte()) & MASK32

    def _next_byte(self) -> int:
        if self.pos >= len(self.data):
            raise CoderError("truncated range-coded stream")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode_value(self) -> int:
        """Current cumulative-frequency offset in [0, TOTAL)."""
        r = self.range >> PROB_BITS
        dv = (self.code - self.low) // r
        return min(int(dv), TOTAL - 1)

    def consume(self, cum_lo: int, cum_hi: int) -> None:
        r = self.range >> PROB_BITS
        self.low += r * cum_lo
        self.range = r * (cum_hi - cum_lo)
        self._normalize()

    def decode_symbol(self, cum: np.ndarray) -> int:
        dv = self.decode_value()
        # binary search: cum[idx] <= dv < cum[idx + 1]
        idx = int(np.searchsorted(cum, dv, side="right")) - 1
        idx = max(0, min(idx, len(cum) - 2))
        self.consume(int(cum[idx]), int(cum[idx + 1]))
        return idx

    def _normalize(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) < TOP:
                pass
            elif self.range < BOT:
                self.range = (-self.low) & (BOT - 1)
            else:
                break
            self.code = ((self.code << 8) | self._next_byte()) & MASK32
            self.low = (self.low << 8) & MASK32
            self.range = (self.range << 8) & MASK32


def range_encode(symbols, cdfs) -> bytes:
    """Batch encode; cdfs is one table per symbol (or one shared table)."""
    symbols = list(symbols)
    tables = _broadcast_tables(cdfs, len(symbols))
    enc = RangeEncoder()
    for sym, cum in zip(symbols, tables):
        cum = validate_cdf(cum)
        if not (0 <= sym < len(cum) - 1):
            raise CoderError(f"symbol {sym} outside table support [0, {len(cum) - 1})")
        enc.encode_symbol(cum, int(sym))
    return enc.flush()


def range_decode(data: bytes, cdfs, count: int | None = None) -> list[int]:
    """Inverse of range_encode given the identical table sequence."""
    if count is None:
        if not hasattr(cdfs, "__len__"):
            raise CoderError("decode needs an explicit count for shared tables")
        count = len(cdfs)
    tables = _broadcast_tables(cdfs, count)
    dec = RangeDecoder(data)
    return [dec.decode_symbol(validate_cdf(cum)) for cum in tables]


def _broadcast_tables(cdfs, n):
    if isinstance(cdfs, np.ndarray) and cdfs.ndim == 1:
        return [cdfs] * n
    cdfs = list(cdfs)
    if len(cdfs) != n:
        raise CoderError(f"expected {n} tables, got {len(cdfs)}")
    return cdfs
