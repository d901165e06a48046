"""Serial entropy-coding kernels: numba-jitted with a numpy fallback.

The autoregressive y-chunk is the hot path of the codec: every position
needs a causal 5x5 context convolution, parameter fusion, an integer CDF
table and one range-coder step, strictly in raster order on the decode
side. These kernels exist in two interchangeable builds:

* a numba ``@njit`` build (default when numba imports), and
* a pure numpy/Python fallback, selected with ``ROICODEC_NUMBA=0``.

Both builds are bit-identical by construction: float64 accumulation in
the same (channel, tap) order, IEEE-exact sqrt for the scale map, and a
shared integer-only CDF quantization that interpolates an embedded
fixed-point Phi table instead of calling libm. Encoding with one build
and decoding with the other yields the same bytes and symbols; a
differential test enforces this.

benchmarks/bench_coding.py compares the two builds.
"""

from __future__ import annotations

import importlib.resources
import logging
import os
from dataclasses import dataclass

import numpy as np

from .rangecoder import (
    BOT,
    FLUSH_BYTES,
    MASK32,
    PROB_BITS,
    TOP,
    TOTAL,
    CoderError,
    RangeDecoder,
    RangeEncoder,
)

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2
FP_BITS = 16
FP_ONE = 1 << FP_BITS  # 16 fractional bits for mu/sigma
SCALE_FLOOR_FP = 2621  # round(0.04 * 2**16)
SIGMA_FP_MAX = 1 << 30
MU_FP_MAX = 300 * FP_ONE
SYM_MAX = 255  # coded symbols live in [-SYM_MAX, SYM_MAX]
UNIFORM_N = 2 * SYM_MAX + 1
PHI_T = 12
PHI_STEPS = 128
PHI_SUB = 256
PHI_OFFSET = PHI_T * PHI_STEPS * PHI_SUB
PHI_IDX_MAX = 2 * PHI_OFFSET
CTX_K = 5  # context kernel size (type-A mask)

# uniform escape-value table over [-SYM_MAX, SYM_MAX]
UNIFORM_CUM = (np.arange(UNIFORM_N + 1, dtype=np.uint64) * TOTAL // UNIFORM_N).astype(np.uint32)

_CAUSAL_TAPS = [
    (dy, dx)
    for dy in range(CTX_K)
    for dx in range(CTX_K)
    if dy < CTX_K // 2 or (dy == CTX_K // 2 and dx < CTX_K // 2)
]


def _load_phi() -> np.ndarray:
    ref = importlib.resources.files("roicodec").joinpath("data/phi_table.npz")
    with ref.open("rb") as fh:
        with np.load(fh) as z:
            return z["phi"].astype(np.uint64)


PHI_TABLE = _load_phi()

try:  # pragma: no cover - absence exercised via env flag
    import numba as _NUMBA
except ImportError:  # pragma: no cover
    _NUMBA = None


def backend() -> str:
    """Active kernel build: 'numba' or 'numpy' (env ROICODEC_NUMBA=0|1)."""
    flag = os.environ.get("ROICODEC_NUMBA", "auto").lower()
    if flag in ("0", "off", "false", "no"):
        return "numpy"
    if _NUMBA is None:
        if flag in ("1", "on", "true", "yes"):
            logger.warning("ROICODEC_NUMBA requested but numba is unavailable; using numpy")
        return "numpy"
    return "numba"


@dataclass
class CodingWeights:
    """float64 export of the entropy-network weights used for coding.

    ctx_w is pre-masked (type A); fusion convs are 1x1 so they are plain
    matrices. Holding these outside torch keeps the coding path free of
    framework nondeterminism and lets both kernel builds share one
    accumulation order.
    """

    ctx_w: np.ndarray  # (2M, M, 5, 5)
    ctx_b: np.ndarray  # (2M,)
    f1_w: np.ndarray  # (F1, 4M)
    f1_b: np.ndarray
    f2_w: np.ndarray  # (F2, F1)
    f2_b: np.ndarray
    f3_w: np.ndarray  # (2M, F2)
    f3_b: np.ndarray

    def __post_init__(self):
        for name in ("ctx_w", "ctx_b", "f1_w", "f1_b", "f2_w", "f2_b", "f3_w", "f3_b"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))

    @property
    def latent_channels(self) -> int:
        return self.ctx_w.shape[1]


# ---------------------------------------------------------------------------
# float64 network math, numpy build. Accumulation order per output element
# is (input channel, tap) everywhere; the numba build repeats it exactly.
# ---------------------------------------------------------------------------


def pad_canvas(symbols: np.ndarray) -> np.ndarray:
    """Latent symbols as float64 with a 2-cell zero border for the 5x5 taps."""
    m, h, w = symbols.shape
    canvas = np.zeros((m, h + 4, w + 4), dtype=np.float64)
    canvas[:, 2 : 2 + h, 2 : 2 + w] = symbols
    return canvas


def _ctx_all_np(canvas_p, ctx_w, ctx_b):
    m = canvas_p.shape[0]
    h, w = canvas_p.shape[1] - 4, canvas_p.shape[2] - 4
    acc = np.empty((ctx_w.shape[0], h, w), dtype=np.float64)
    acc[:] = ctx_b[:, None, None]
    for ci in range(m):
        for dy, dx in _CAUSAL_TAPS:
            acc += ctx_w[:, ci, dy, dx][:, None, None] * canvas_p[ci, dy : dy + h, dx : dx + w]
    return acc


def _matvec_all_np(wmat, bias, x):
    acc = np.empty((wmat.shape[0],) + x.shape[1:], dtype=np.float64)
    acc[:] = bias[:, None, None]
    for ci in range(wmat.shape[1]):
        acc += wmat[:, ci][:, None, None] * x[ci]
    return acc


def _leaky(x):
    return np.where(x > 0.0, x, LEAKY_SLOPE * x)


def _sigma_map(sraw):
    return SCALE_FLOOR_FP / float(FP_ONE) + 0.5 * (sraw + np.sqrt(sraw * sraw + 1.0))


def params_all_np(canvas_p, hyper, w: CodingWeights):
    """Gaussian parameters at every position (encode-side masked pass)."""
    ctx = _ctx_all_np(canvas_p, w.ctx_w, w.ctx_b)
    x = np.concatenate([hyper, ctx], axis=0)
    a = _leaky(_matvec_all_np(w.f1_w, w.f1_b, x))
    a = _leaky(_matvec_all_np(w.f2_w, w.f2_b, a))
    a = _matvec_all_np(w.f3_w, w.f3_b, a)
    m = w.latent_channels
    return a[:m], _sigma_map(a[m:])


def _params_point_np(canvas_p, hyper, w: CodingWeights, i, j):
    m = w.latent_channels
    ctx = w.ctx_b.copy()
    for ci in range(m):
        for dy, dx in _CAUSAL_TAPS:
            ctx += w.ctx_w[:, ci, dy, dx] * canvas_p[ci, i + dy, j + dx]
    x = np.concatenate([hyper[:, i, j], ctx])
    a = w.f1_b.copy()
    for ci in range(x.shape[0]):
        a += w.f1_w[:, ci] * x[ci]
    a = _leaky(a)
    b = w.f2_b.copy()
    for ci in range(a.shape[0]):
        b += w.f2_w[:, ci] * a[ci]
    b = _leaky(b)
    c = w.f3_b.copy()
    for ci in range(b.shape[0]):
        c += w.f3_w[:, ci] * b[ci]
    return c[:m], _sigma_map(c[m:])


def quantize_mu_sigma(mu, sigma):
    """Fixed-point (16 fractional bits) clamped Gaussian parameters."""
    mu_fp = np.floor(np.asarray(mu, dtype=np.float64) * FP_ONE + 0.5).astype(np.int64)
    sg_fp = np.floor(np.asarray(sigma, dtype=np.float64) * FP_ONE + 0.5).astype(np.int64)
    np.clip(mu_fp, -MU_FP_MAX, MU_FP_MAX, out=mu_fp)
    np.clip(sg_fp, SCALE_FLOOR_FP, SIGMA_FP_MAX, out=sg_fp)
    return mu_fp, sg_fp


def _phi_lookup_int(idx_fp):
    if idx_fp <= 0:
        return 0
    if idx_fp >= PHI_IDX_MAX:
        return 1 << 32
    idx = idx_fp >> 8
    frac = idx_fp & 255
    return (int(PHI_TABLE[idx]) * (PHI_SUB - frac) + int(PHI_TABLE[idx + 1]) * frac) >> 8


def build_cdf(mu_fp: int, sg_fp: int):
    """Integer CDF over a support window around the mean, plus ESCAPE.

    Returns (cum, lo, n): support symbols lo..lo+n-1 occupy indices
    0..n-1 and ESCAPE is index n, so cum has n+2 entries. Every entry
    gets at least one count, keeping the table strictly increasing; the
    unassigned remainder of the 2**16 budget lands on ESCAPE.
    """
    mu_fp = int(mu_fp)
    sg_fp = int(sg_fp)
    c = (mu_fp + FP_ONE // 2) >> FP_BITS
    c = max(-SYM_MAX, min(SYM_MAX, c))
    halfw = ((sg_fp * 8) >> FP_BITS) + 2
    lo = max(-SYM_MAX, c - halfw)
    hi = min(SYM_MAX, c + halfw)
    n = hi - lo + 1
    avail = TOTAL - (n + 1)
    cum = np.empty(n + 2, dtype=np.uint32)
    cum[0] = 0
    t_fp = ((2 * lo - 1) << 15) - mu_fp
    prev_phi = _phi_lookup_int(t_fp * 32768 // sg_fp + PHI_OFFSET)
    total = 0
    for k in range(n):
        t_fp = ((2 * (lo + k) + 1) << 15) - mu_fp
        cur_phi = _phi_lookup_int(t_fp * 32768 // sg_fp + PHI_OFFSET)
        count = 1 + ((avail * (cur_phi - prev_phi)) >> 32)
        prev_phi = cur_phi
        total += count
        cum[k + 1] = total
    cum[n + 1] = TOTAL
    return cum, lo, n


def cdf_bits(cum, index) -> float:
    """Ideal bits the coder spends on `index` under an integer table."""
    span = float(int(cum[index + 1]) - int(cum[index]))
    return float(-np.log2(span / TOTAL))


# ---------------------------------------------------------------------------
# serial y-chunk encode/decode, numpy build
# ---------------------------------------------------------------------------


def _encode_y_np(symbols, hyper, w: CodingWeights):
    m, h, wd = symbols.shape
    canvas = pad_canvas(symbols)
    mu, sigma = params_all_np(canvas, hyper, w)
    mu_fp, sg_fp = quantize_mu_sigma(mu, sigma)
    enc = RangeEncoder()
    escapes = 0
    for i in range(h):
        for j in range(wd):
            for c in range(m):
                cum, lo, n = build_cdf(int(mu_fp[c, i, j]), int(sg_fp[c, i, j]))
                s = int(symbols[c, i, j])
                k = s - lo
                if 0 <= k < n:
                    enc.encode(int(cum[k]), int(cum[k + 1]))
                else:
                    escapes += 1
                    enc.encode(int(cum[n]), int(cum[n + 1]))
                    v = s + SYM_MAX
                    enc.encode(int(UNIFORM_CUM[v]), int(UNIFORM_CUM[v + 1]))
    return enc.flush(), escapes


def _decode_y_np(data, hyper, w: CodingWeights, m, h, wd):
    canvas = np.zeros((m, h + 4, wd + 4), dtype=np.float64)
    out = np.zeros((m, h, wd), dtype=np.int32)
    dec = RangeDecoder(data)
    for i in range(h):
        for j in range(wd):
            mu, sigma = _params_point_np(canvas, hyper, w, i, j)
            mu_fp, sg_fp = quantize_mu_sigma(mu, sigma)
            for c in range(m):
                cum, lo, n = build_cdf(int(mu_fp[c]), int(sg_fp[c]))
                idx = dec.decode_symbol(cum)
                if idx == n:
                    v = dec.decode_symbol(UNIFORM_CUM)
                    s = v - SYM_MAX
                else:
                    s = lo + idx
                out[c, i, j] = s
                canvas[c, i + 2, j + 2] = float(s)
    return out


# ---------------------------------------------------------------------------
# numba build: the same algorithms compiled; loop order kept identical
# ---------------------------------------------------------------------------

if _NUMBA is not None:
    from numba import njit

    @njit(cache=True)
    def _params_point_nb(canvas_p, hyper, ctx_w, ctx_b, f1_w, f1_b, f2_w, f2_b, f3_w, f3_b, i, j, mu, sigma):
        m = ctx_w.shape[1]
        c2 = ctx_w.shape[0]
        ctx = np.empty(c2, dtype=np.float64)
        for co in range(c2):
            ctx[co] = ctx_b[co]
        for ci in range(m):
            for dy in range(CTX_K):
                for dx in range(CTX_K):
                    if dy < 2 or (dy == 2 and dx < 2):
                        v = canvas_p[ci, i + dy, j + dx]
                        for co in range(c2):
                            ctx[co] += ctx_w[co, ci, dy, dx] * v
        nin = hyper.shape[0] + c2
        x = np.empty(nin, dtype=np.float64)
        for ci in range(hyper.shape[0]):
            x[ci] = hyper[ci, i, j]
        for ci in range(c2):
            x[hyper.shape[0] + ci] = ctx[ci]
        a = np.empty(f1_w.shape[0], dtype=np.float64)
        for co in range(f1_w.shape[0]):
            a[co] = f1_b[co]
        for ci in range(nin):
            v = x[ci]
            for co in range(f1_w.shape[0]):
                a[co] += f1_w[co, ci] * v
        for co in range(a.shape[0]):
            if a[co] <= 0.0:
                a[co] = LEAKY_SLOPE * a[co]
        b = np.empty(f2_w.shape[0], dtype=np.float64)
        for co in range(f2_w.shape[0]):
            b[co] = f2_b[co]
        for ci in range(a.shape[0]):
            v = a[ci]
            for co in range(f2_w.shape[0]):
                b[co] += f2_w[co, ci] * v
        for co in range(b.shape[0]):
            if b[co] <= 0.0:
                b[co] = LEAKY_SLOPE * b[co]
        cvec = np.empty(f3_w.shape[0], dtype=np.float64)
        for co in range(f3_w.shape[0]):
            cvec[co] = f3_b[co]
        for ci in range(b.shape[0]):
            v = b[ci]
            for co in range(f3_w.shape[0]):
                cvec[co] += f3_w[co, ci] * v
        floor = SCALE_FLOOR_FP / 65536.0
        for c in range(m):
            mu[c] = cvec[c]
            sraw = cvec[m + c]
            sigma[c] = floor + 0.5 * (sraw + np.sqrt(sraw * sraw + 1.0))

    @njit(cache=True)
    def _build_cdf_nb(mu_f, sg_f, phi, cum):
        mu_fp = np.int64(np.floor(mu_f * 65536.0 + 0.5))
        sg_fp = np.int64(np.floor(sg_f * 65536.0 + 0.5))
        if mu_fp < -MU_FP_MAX:
            mu_fp = np.int64(-MU_FP_MAX)
        elif mu_fp > MU_FP_MAX:
            mu_fp = np.int64(MU_FP_MAX)
        if sg_fp < SCALE_FLOOR_FP:
            sg_fp = np.int64(SCALE_FLOOR_FP)
        elif sg_fp > SIGMA_FP_MAX:
            sg_fp = np.int64(SIGMA_FP_MAX)
        c = (mu_fp + 32768) >> FP_BITS
        if c < -SYM_MAX:
            c = np.int64(-SYM_MAX)
        elif c > SYM_MAX:
            c = np.int64(SYM_MAX)
        halfw = ((sg_fp * 8) >> FP_BITS) + 2
        lo = c - halfw
        if lo < -SYM_MAX:
            lo = np.int64(-SYM_MAX)
        hi = c + halfw
        if hi > SYM_MAX:
            hi = np.int64(SYM_MAX)
        n = int(hi - lo + 1)
        avail = np.int64(TOTAL - (n + 1))
        t_fp = ((2 * lo - 1) << 15) - mu_fp
        idx_fp = t_fp * 32768 // sg_fp + PHI_OFFSET
        prev_phi = _phi_int_nb(idx_fp, phi)
        total = np.int64(0)
        cum[0] = 0
        for k in range(n):
            t_fp = ((2 * (lo + k) + 1) << 15) - mu_fp
            idx_fp = t_fp * 32768 // sg_fp + PHI_OFFSET
            cur_phi = _phi_int_nb(idx_fp, phi)
            count = 1 + ((avail * (cur_phi - prev_phi)) >> 32)
            prev_phi = cur_phi
            total += count
            cum[k + 1] = total
        cum[n + 1] = TOTAL
        return int(lo), n

    @njit(cache=True)
    def _phi_int_nb(idx_fp, phi):
        if idx_fp <= 0:
            return np.int64(0)
        if idx_fp >= PHI_IDX_MAX:
            return np.int64(1) << 32
        idx = idx_fp >> 8
        frac = idx_fp & 255
        return (np.int64(phi[idx]) * (PHI_SUB - frac) + np.int64(phi[idx + 1]) * frac) >> 8

    @njit(cache=True)
    def _encode_y_nb(symbols, hyper, ctx_w, ctx_b, f1_w, f1_b, f2_w, f2_b, f3_w, f3_b, phi, uniform, out_buf):
        m, h, wd = symbols.shape
        canvas = np.zeros((m, h + 4, wd + 4), dtype=np.float64)
        for c in range(m):
            for i in range(h):
                for j in range(wd):
                    canvas[c, i + 2, j + 2] = symbols[c, i, j]
        mu = np.empty(m, dtype=np.float64)
        sigma = np.empty(m, dtype=np.float64)
        cum = np.empty(2 * SYM_MAX + 3, dtype=np.uint32)
        low = np.uint64(0)
        rng = np.uint64(MASK32)
        pos = 0
        escapes = 0
        for i in range(h):
            for j in range(wd):
                _params_point_nb(canvas, hyper, ctx_w, ctx_b, f1_w, f1_b, f2_w, f2_b, f3_w, f3_b, i, j, mu, sigma)
                for c in range(m):
                    lo, n = _build_cdf_nb(mu[c], sigma[c], phi, cum)
                    s = int(symbols[c, i, j])
                    k = s - lo
                    if 0 <= k < n:
                        low, rng, pos = _enc_step_nb(low, rng, np.int64(cum[k]), np.int64(cum[k + 1]), out_buf, pos)
                    else:
                        escapes += 1
                        low, rng, pos = _enc_step_nb(low, rng, np.int64(cum[n]), np.int64(cum[n + 1]), out_buf, pos)
                        v = s + SYM_MAX
                        low, rng, pos = _enc_step_nb(low, rng, np.int64(uniform[v]), np.int64(uniform[v + 1]), out_buf, pos)
        for _ in range(FLUSH_BYTES):
            out_buf[pos] = np.uint8((low >> np.uint64(24)) & np.uint64(0xFF))
            pos += 1
            low = (low << np.uint64(8)) & np.uint64(MASK32)
        return pos, escapes

    @njit(cache=True)
    def _enc_step_nb(low, rng, cum_lo, cum_hi, out_buf, pos):
        r = rng >> np.uint64(PROB_BITS)
        low = low + r * np.uint64(cum_lo)
        rng = r * np.uint64(cum_hi - cum_lo)
        while True:
            if (low ^ (low + rng)) < np.uint64(TOP):
                pass
            elif rng < np.uint64(BOT):
                rng = (np.uint64(0) - low) & np.uint64(BOT - 1)
            else:
                break
            out_buf[pos] = np.uint8((low >> np.uint64(24)) & np.uint64(0xFF))
            pos += 1
            low = (low << np.uint64(8)) & np.uint64(MASK32)
            rng = (rng << np.uint64(8)) & np.uint64(MASK32)
        return low, rng, pos

    @njit(cache=True)
    def _dec_step_nb(state, cum_lo, cum_hi, data):
        # state: [low, rng, code, pos, status]
        r = state[1] >> np.uint64(PROB_BITS)
        state[0] = state[0] + r * np.uint64(cum_lo)
        state[1] = r * np.uint64(cum_hi - cum_lo)
        while True:
            if (state[0] ^ (state[0] + state[1])) < np.uint64(TOP):
                pass
            elif state[1] < np.uint64(BOT):
                state[1] = (np.uint64(0) - state[0]) & np.uint64(BOT - 1)
            else:
                break
            p = int(state[3])
            if p >= data.shape[0]:
                state[4] = np.uint64(1)
                return
            state[2] = ((state[2] << np.uint64(8)) | np.uint64(data[p])) & np.uint64(MASK32)
            state[3] = state[3] + np.uint64(1)
            state[0] = (state[0] << np.uint64(8)) & np.uint64(MASK32)
            state[1] = (state[1] << np.uint64(8)) & np.uint64(MASK32)

    @njit(cache=True)
    def _dec_value_nb(state):
        r = state[1] >> np.uint64(PROB_BITS)
        dv = (state[2] - state[0]) // r
        if dv > np.uint64(TOTAL - 1):
            dv = np.uint64(TOTAL - 1)
        return np.int64(dv)

    @njit(cache=True)
    def _search_cum_nb(cum, size, dv):
        lo = 0
        hi = size - 1
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if np.int64(cum[mid]) > dv:
                hi = mid
            else:
                lo = mid
        return lo

    @njit(cache=True)
    def _decode_y_nb(data, hyper, ctx_w, ctx_b, f1_w, f1_b, f2_w, f2_b, f3_w, f3_b, phi, uniform, m, h, wd, out):
        canvas = np.zeros((m, h + 4, wd + 4), dtype=np.float64)
        mu = np.empty(m, dtype=np.float64)
        sigma = np.empty(m, dtype=np.float64)
        cum = np.empty(2 * SYM_MAX + 3, dtype=np.uint32)
        state = np.zeros(5, dtype=np.uint64)
        state[1] = np.uint64(MASK32)
        if data.shape[0] < FLUSH_BYTES:
            return 1
        for _ in range(FLUSH_BYTES):
            p = int(state[3])
            state[2] = ((state[2] << np.uint64(8)) | np.uint64(data[p])) & np.uint64(MASK32)
            state[3] = state[3] + np.uint64(1)
        for i in range(h):
            for j in range(wd):
                _params_point_nb(canvas, hyper, ctx_w, ctx_b, f1_w, f1_b, f2_w, f2_b, f3_w, f3_b, i, j, mu, sigma)
                for c in range(m):
                    lo, n = _build_cdf_nb(mu[c], sigma[c], phi, cum)
                    dv = _dec_value_nb(state)
                    idx = _search_cum_nb(cum, n + 2, dv)
                    _dec_step_nb(state, np.int64(cum[idx]), np.int64(cum[idx + 1]), data)
                    if state[4] != np.uint64(0):
                        return 1
                    if idx == n:
                        dv = _dec_value_nb(state)
                        v = _search_cum_nb(uniform, UNIFORM_N + 1, dv)
                        _dec_step_nb(state, np.int64(uniform[v]), np.int64(uniform[v + 1]), data)
                        if state[4] != np.uint64(0):
                            return 1
                        s = v - SYM_MAX
                    else:
                        s = int(lo) + idx
                    out[c, i, j] = s
                    canvas[c, i + 2, j + 2] = float(s)
        return 0


# ---------------------------------------------------------------------------
# public dispatchers
# ---------------------------------------------------------------------------


def encode_y(symbols: np.ndarray, hyper: np.ndarray, w: CodingWeights) -> tuple[bytes, int]:
    """Range-encode the latent symbol cube; returns (bytes, escape_count)."""
    symbols = np.ascontiguousarray(symbols, dtype=np.int32)
    hyper = np.ascontiguousarray(hyper, dtype=np.float64)
    if backend() == "numba":
        out_buf = np.empty(symbols.size * 6 + 64, dtype=np.uint8)
        n, escapes = _encode_y_nb(
            symbols, hyper, w.ctx_w, w.ctx_b, w.f1_w, w.f1_b, w.f2_w, w.f2_b, w.f3_w, w.f3_b,
            PHI_TABLE, UNIFORM_CUM, out_buf,
        )
        return bytes(out_buf[:n].tobytes()), int(escapes)
    return _encode_y_np(symbols, hyper, w)


def decode_y(data: bytes, hyper: np.ndarray, w: CodingWeights, shape) -> np.ndarray:
    """Serially decode the latent symbol cube of `shape` = (M, h, w)."""
    m, h, wd = shape
    hyper = np.ascontiguousarray(hyper, dtype=np.float64)
    if backend() == "numba":
        out = np.zeros((m, h, wd), dtype=np.int32)
        status = _decode_y_nb(
            np.frombuffer(data, dtype=np.uint8), hyper,
            w.ctx_w, w.ctx_b, w.f1_w, w.f1_b, w.f2_w, w.f2_b, w.f3_w, w.f3_b,
            PHI_TABLE, UNIFORM_CUM, m, h, wd, out,
        )
        if status != 0:
            raise CoderError("truncated range-coded stream")
        return out
    return _decode_y_np(data, hyper, w, m, h, wd)


def estimate_table_bits(symbols, hyper, w: CodingWeights) -> float:
    """Exact bit cost under the quantized integer tables (no coder slack)."""
    symbols = np.ascontiguousarray(symbols, dtype=np.int32)
    canvas = pad_canvas(symbols)
    mu, sigma = params_all_np(canvas, np.ascontiguousarray(hyper, dtype=np.float64), w)
    mu_fp, sg_fp = quantize_mu_sigma(mu, sigma)
    m, h, wd = symbols.shape
    bits = 0.0
    for i in range(h):
        for j in range(wd):
            for c in range(m):
                cum, lo, n = build_cdf(int(mu_fp[c, i, j]), int(sg_fp[c, i, j]))
                k = int(symbols[c, i, j]) - lo
                if 0 <= k < n:
                    bits += cdf_bits(cum, k)
                else:
                    bits += cdf_bits(cum, n) + cdf_bits(UNIFORM_CUM, int(symbols[c, i, j]) + SYM_MAX)
    return bits
