"""Bitstream container, lossless mask/z coding and the image pipelines.

Container layout (little-endian, specified in docs/bitstream.md):

    magic    4 bytes  "ROIC"
    version  u8
    width    u16      pre-padding image width
    height   u16      pre-padding image height
    profile  u8
    3 chunks, each u32 length + payload: mask, z, y

The mask chunk is lossless (adaptive run-length coding with a raw-bitmap
fallback), the z chunk uses static per-channel tables stored with the
checkpoint, and the y chunk is the serial autoregressive stream produced
by the kernels module.
"""

from __future__ import annotations

import logging
import os
import shutil
import struct
import subprocess
from dataclasses import dataclass

import numpy as np
import torch

from . import kernels
from .dataio import build_mask_pyramid, crop_to_box, pad_to_multiple
from .entropy import gaussian_bits, round_half_away
from .rangecoder import (  # range_encode/range_decode re-exported as codec ops
    TOTAL,
    CoderError,
    RangeDecoder,
    RangeEncoder,
    range_decode,
    range_encode,
    validate_cdf,
)
logger = logging.getLogger(__name__)

MAGIC = b"ROIC"
VERSION = 1
HEADER = struct.Struct("<4sBHHB")
Z_SYM_MAX = kernels.SYM_MAX  # z and y share the coded symbol range


class ArtifactMismatchError(RuntimeError):
    """Bitstream and model disagree (profile/version)."""


@dataclass
class Bitstream:
    width: int
    height: int
    profile_id: int
    mask_chunk: bytes
    z_chunk: bytes
    y_chunk: bytes
    version: int = VERSION

    def tobytes(self) -> bytes:
        head = HEADER.pack(MAGIC, self.version, self.width, self.height, self.profile_id)
        parts = [head]
        for chunk in (self.mask_chunk, self.z_chunk, self.y_chunk):
            parts.append(struct.pack("<I", len(chunk)))
            parts.append(chunk)
        return b"".join(parts)

    @classmethod
    def frombytes(cls, data: bytes) -> "Bitstream":
        if len(data) < HEADER.size:
            raise CoderError("bitstream shorter than header")
        magic, version, width, height, profile_id = HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise CoderError(f"bad magic {magic!r}")
        if version != VERSION:
            raise ArtifactMismatchError(f"unsupported bitstream version {version}")
        pos = HEADER.size
        chunks = []
        for _ in range(3):
            if pos + 4 > len(data):
                raise CoderError("truncated chunk table")
            (length,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + length > len(data):
                raise CoderError("chunk length exceeds stream size")
            chunks.append(data[pos : pos + length])
            pos += length
        if pos != len(data):
            raise CoderError("trailing bytes after final chunk")
        return cls(width, height, profile_id, *chunks, version=version)


# ---------------------------------------------------------------------------
# mask chunk: adaptive run-length coding with raw fallback
# ---------------------------------------------------------------------------

MASK_MODE_RLE = 0
MASK_MODE_RAW = 1
_HALF_CUM = np.array([0, TOTAL // 2, TOTAL], dtype=np.uint32)


def _switch_table(c_cont: int, c_stop: int) -> tuple[int, int]:
    p_cont = (c_cont * TOTAL) // (c_cont + c_stop)
    return max(1, min(TOTAL - 1, p_cont)), TOTAL


def encode_mask(mask: np.ndarray) -> bytes:
    """Lossless mask chunk: run-length geometric coding, raw if shorter.

    Runs are coded as continue/stop decisions with per-color adaptive
    counts, i.e. an adaptive geometric run-length model.
    """
    flat = (np.asarray(mask).reshape(-1) > 0.5).astype(np.uint8)
    n = flat.size
    raw = np.packbits(flat).tobytes()
    enc = RangeEncoder()
    enc.encode_symbol(_HALF_CUM, int(flat[0]))
    counts = [[1, 1], [1, 1]]  # per color: [continue, stop]
    for t in range(1, n):
        cur = int(flat[t - 1])
        switch = int(flat[t] != flat[t - 1])
        p_cont, _ = _switch_table(*counts[cur])
        if switch:
            enc.encode(p_cont, TOTAL)
        else:
            enc.encode(0, p_cont)
        counts[cur][switch] += 1
    payload = enc.flush()
    if len(payload) < len(raw):
        return bytes([MASK_MODE_RLE]) + payload
    return bytes([MASK_MODE_RAW]) + raw


def decode_mask(data: bytes, dims: tuple[int, int]) -> np.ndarray:
    h, w = dims
    n = h * w
    if not data:
        raise CoderError("empty mask chunk")
    mode, payload = data[0], data[1:]
    if mode == MASK_MODE_RAW:
        if len(payload) != (n + 7) // 8:
            raise CoderError("raw mask chunk has wrong size for the stated dims")
        flat = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[:n]
        return flat.reshape(h, w).astype(np.float64)
    if mode != MASK_MODE_RLE:
        raise CoderError(f"unknown mask chunk mode {mode}")
    dec = RangeDecoder(payload)
    flat = np.empty(n, dtype=np.uint8)
    flat[0] = dec.decode_symbol(_HALF_CUM)
    counts = [[1, 1], [1, 1]]
    for t in range(1, n):
        cur = int(flat[t - 1])
        p_cont, _ = _switch_table(*counts[cur])
        switch = int(dec.decode_value() >= p_cont)
        if switch:
            dec.consume(p_cont, TOTAL)
        else:
            dec.consume(0, p_cont)
        flat[t] = flat[t - 1] ^ switch
        counts[cur][switch] += 1
    return flat.reshape(h, w).astype(np.float64)


# ---------------------------------------------------------------------------
# z chunk: static per-channel tables (escape-free, clamped symbols)
# ---------------------------------------------------------------------------


def build_static_tables(masses: np.ndarray) -> np.ndarray:
    """Quantize per-channel interval masses over [-SYM_MAX, SYM_MAX] to
    strictly-increasing integer CDFs summing exactly to 2**16.

    The rounding remainder is assigned to each channel's most likely
    symbol (first index on ties), which keeps the map deterministic.
    """
    masses = np.asarray(masses, dtype=np.float64)
    c, n = masses.shape
    if n != 2 * Z_SYM_MAX + 1:
        raise CoderError(f"expected {2 * Z_SYM_MAX + 1} interval masses per channel")
    avail = TOTAL - n
    counts = 1 + np.floor(avail * masses).astype(np.int64)
    leftover = TOTAL - counts.sum(axis=1)
    if np.any(leftover < 0):
        raise CoderError("interval masses exceed 1")
    top = np.argmax(masses, axis=1)
    counts[np.arange(c), top] += leftover
    cum = np.zeros((c, n + 1), dtype=np.uint32)
    cum[:, 1:] = np.cumsum(counts, axis=1)
    return cum


def encode_z(symbols: np.ndarray, tables: np.ndarray, backend) -> bytes:
    c, h, w = symbols.shape
    flat = symbols.reshape(c, -1)
    idx = np.repeat(np.arange(c, dtype=np.int64), h * w)
    shifted = (flat + Z_SYM_MAX).reshape(-1)
    return backend.encode(shifted.tolist(), tables, idx.tolist())


def decode_z(data: bytes, tables: np.ndarray, shape, backend) -> np.ndarray:
    c, h, w = shape
    idx = np.repeat(np.arange(c, dtype=np.int64), h * w)
    syms = backend.decode(data, tables, idx.tolist())
    return (np.asarray(syms, dtype=np.int32) - Z_SYM_MAX).reshape(c, h, w)


# ---------------------------------------------------------------------------
# coder backends (reference | fast)
# ---------------------------------------------------------------------------


class ReferenceBackend:
    """Pure-Python reference coder behind the pluggable backend contract."""

    name = "reference"

    def encode(self, symbols, tables, indices) -> bytes:
        tables = [validate_cdf(t) for t in tables]
        enc = RangeEncoder()
        for sym, ti in zip(symbols, indices):
            cum = tables[ti]
            if not (0 <= sym < len(cum) - 1):
                raise CoderError(f"symbol {sym} outside table support")
            enc.encode_symbol(cum, int(sym))
        return enc.flush()

    def decode(self, data, tables, indices) -> list[int]:
        tables = [validate_cdf(t) for t in tables]
        dec = RangeDecoder(data)
        return [dec.decode_symbol(tables[ti]) for ti in indices]


class FastBackend:
    """Bridge to the external high-throughput coder (node build).

    The boundary passes flat integer buffers only: packed CDF tables, a
    per-symbol table index and the symbols/bytes themselves.
    """

    name = "fast"

    def __init__(self, cli_path: str):
        self.cli_path = cli_path

    @staticmethod
    def discover() -> "FastBackend | None":
        path = os.environ.get("ROICODEC_FAST_CODER", "")
        candidates = [path] if path else []
        here = os.path.dirname(os.path.abspath(__file__))
        root = os.path.join(here, "..", "..", "fastcoder", "dist")
        candidates += [os.path.join(root, "src", "cli.js"), os.path.join(root, "cli.js")]
        for cand in candidates:
            if cand and os.path.exists(cand) and shutil.which("node"):
                backend = FastBackend(os.path.abspath(cand))
                if backend.version() == VERSION:
                    return backend
                logger.warning("fast coder at %s has mismatched conformance version", cand)
        return None

    def version(self) -> int:
        try:
            out = subprocess.run(
                ["node", self.cli_path, "version"], stdout=subprocess.PIPE, check=True
            )
            return int(out.stdout.decode().strip())
        except (subprocess.CalledProcessError, ValueError):
            return -1

    def _pack(self, op, symbols, tables, indices, data=b"") -> bytes:
        offsets = np.zeros(len(tables) + 1, dtype=np.uint32)
        for i, t in enumerate(tables):
            offsets[i + 1] = offsets[i] + len(t)
        entries = np.concatenate([np.asarray(t, dtype=np.uint32) for t in tables])
        idx = np.asarray(indices, dtype=np.uint32)
        head = struct.pack("<IIII", op, len(indices), len(tables), len(entries))
        body = offsets.tobytes() + entries.tobytes() + idx.tobytes()
        if op == 0:
            body += np.asarray(symbols, dtype=np.int32).tobytes()
        else:
            body += struct.pack("<I", len(data)) + data
        return head + body

    def _run(self, payload: bytes) -> bytes:
        proc = subprocess.run(
            ["node", self.cli_path, "pipe"], input=payload, stdout=subprocess.PIPE, check=False
        )
        if proc.returncode != 0:
            raise CoderError(f"fast coder backend failed (exit {proc.returncode})")
        return proc.stdout

    def encode(self, symbols, tables, indices) -> bytes:
        out = self._run(self._pack(0, symbols, tables, indices))
        (n,) = struct.unpack_from("<I", out, 0)
        return out[4 : 4 + n]

    def decode(self, data, tables, indices) -> list[int]:
        out = self._run(self._pack(1, None, tables, indices, data))
        return np.frombuffer(out, dtype=np.int32, count=len(indices)).tolist()


def get_coder_backend(name: str = "reference"):
    if name in ("reference", None, ""):
        return ReferenceBackend()
    if name == "fast":
        fast = FastBackend.discover()
        if fast is not None:
            return fast
        logger.warning("coder_backend=fast requested but no fast build found; using reference")
        return ReferenceBackend()
    raise ValueError(f"unknown coder backend {name!r}")


# ---------------------------------------------------------------------------
# full image encode/decode
# ---------------------------------------------------------------------------


def encode_image(img, mask, model, count_mask_bits=True, backend=None):
    """Run the full pipeline and return (Bitstream, stats dict).

    stats carries actual chunk sizes, the model's rate estimate for the
    same quantized latents, escape/clip counters, and bpp under both
    mask-accounting conventions.
    """
    backend = backend or ReferenceBackend()
    x = img.data if hasattr(img, "data") else np.asarray(img, dtype=np.float64)
    m = mask.data if hasattr(mask, "data") else np.asarray(mask, dtype=np.float64)
    if x.shape[:2] != m.shape:
        raise ValueError("image/mask dimension mismatch")
    height, width = x.shape[:2]
    if height > 0xFFFF or width > 0xFFFF:
        raise ValueError("image dims exceed container limits")
    x_pad, _ = pad_to_multiple(x, 64)
    m_pad, _ = pad_to_multiple(m, 64)
    pyramid = build_mask_pyramid(m_pad)

    with torch.no_grad():
        xt = torch.from_numpy(x_pad.transpose(2, 0, 1)[None]).float()
        y = model.encode_latent(xt, pyramid, m_pad)
        y_sym, y_clipped = _quantize_symbols(y)
        z = model.hyper_analysis(y)
        z_sym, z_clipped = _quantize_symbols(z)
        z_hat = torch.from_numpy(z_sym.astype(np.float32))[None]
        hyper = model.hyper_synthesis(z_hat)[0].double().numpy()

        # model-side estimate on the same quantized latents
        y_hat_t = torch.from_numpy(y_sym.astype(np.float32))[None]
        ctx = model.context(y_hat_t)
        params = model.fusion(model.hyper_synthesis(z_hat), ctx)
        est_y_bits = float(gaussian_bits(y_hat_t, params).sum())
        est_z_bits = float(model.z_prior.bits(z_hat.float()).sum())

    weights = model.coding_weights()
    y_chunk, escapes = kernels.encode_y(y_sym, hyper, weights)
    z_chunk = encode_z(z_sym, model.z_tables(), backend)
    mask_chunk = encode_mask(m)

    stream = Bitstream(
        width=width,
        height=height,
        profile_id=model.profile_id,
        mask_chunk=mask_chunk,
        z_chunk=z_chunk,
        y_chunk=y_chunk,
    )
    pixels = height * width
    container_bits = 8 * (HEADER.size + 12)
    payload_bits = 8 * (len(mask_chunk) + len(z_chunk) + len(y_chunk))
    bpp_with_mask = (payload_bits + container_bits) / pixels
    bpp_wo_mask = (payload_bits + container_bits - 8 * len(mask_chunk)) / pixels
    stats = {
        "width": width,
        "height": height,
        "pixels": pixels,
        "y_chunk_bytes": len(y_chunk),
        "z_chunk_bytes": len(z_chunk),
        "mask_chunk_bytes": len(mask_chunk),
        "header_bytes": HEADER.size + 12,
        "estimate_y_bits": est_y_bits,
        "estimate_z_bits": est_z_bits,
        "escapes": int(escapes),
        "clipped_latents": int(y_clipped + z_clipped),
        "bpp": bpp_with_mask if count_mask_bits else bpp_wo_mask,
        "bpp_with_mask": bpp_with_mask,
        "bpp_without_mask": bpp_wo_mask,
    }
    if y_clipped or z_clipped:
        logger.warning("clamped %d out-of-range latents during coding", y_clipped + z_clipped)
    return stream, stats


def decode_image(stream, model, backend=None):
    """Decode a Bitstream (or raw bytes); returns a dict of outputs."""
    backend = backend or ReferenceBackend()
    if isinstance(stream, (bytes, bytearray)):
        stream = Bitstream.frombytes(bytes(stream))
    if stream.profile_id != model.profile_id:
        raise ArtifactMismatchError(
            f"bitstream profile {stream.profile_id} != model profile {model.profile_id}"
        )
    height, width = stream.height, stream.width
    mask = decode_mask(stream.mask_chunk, (height, width))
    m_pad, _ = pad_to_multiple(mask, 64)
    ph, pw = m_pad.shape
    pyramid = build_mask_pyramid(m_pad)

    zc = model.cfg.N
    z_shape = (zc, ph // 64, pw // 64)
    z_sym = decode_z(stream.z_chunk, model.z_tables(), z_shape, backend)
    with torch.no_grad():
        z_hat = torch.from_numpy(z_sym.astype(np.float32))[None]
        hyper = model.hyper_synthesis(z_hat)[0].double().numpy()
    y_shape = (model.cfg.M, ph // 16, pw // 16)
    y_sym = kernels.decode_y(stream.y_chunk, hyper, model.coding_weights(), y_shape)

    with torch.no_grad():
        y_hat = torch.from_numpy(y_sym.astype(np.float32))[None]
        x_f, x_b, x_hat = model.reconstruct(y_hat, pyramid, m_pad)

    def to_img(t):
        arr = t[0].clamp(0.0, 1.0).numpy().transpose(1, 2, 0).astype(np.float64)
        return crop_to_box(arr, (0, 0, height, width))

    return {
        "x_hat": to_img(x_hat),
        "x_f": to_img(x_f),
        "x_b": to_img(x_b) if x_b is not None else None,
        "y_hat": y_sym,
        "z_hat": z_sym,
        "mask": mask,
    }


def _quantize_symbols(t: torch.Tensor):
    """Round-half-away + clamp to the coder's symbol range; returns int32."""
    arr = round_half_away(t)[0].numpy()
    clipped = int(np.count_nonzero(np.abs(arr) > kernels.SYM_MAX))
    return np.clip(arr, -kernels.SYM_MAX, kernels.SYM_MAX).astype(np.int32), clipped
