"""Generate the shared conformance fixtures under fixtures/golden/.

- coder_cases.json: range-coder golden vectors (tables, per-symbol table
  indices, symbols, expected bytes). Pure-integer content, platform-exact;
  this is the contract file alternate coder backends must match.
- golden_*.roic + golden_nano.npz: container-level fixtures produced with
  a seeded nano checkpoint, plus the expected decoded latents, used by the
  Python suite to guard the container format.
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import torch

from roicodec.codec import encode_image
from roicodec.model import build_model, save_checkpoint
from roicodec.rangecoder import TOTAL, range_encode
from roicodec.toydata import make_synthetic_pair

ROOT = os.path.join(os.path.dirname(__file__), "..")
OUT = os.path.join(ROOT, "fixtures", "golden")


def uniform_table(n):
    return (np.arange(n + 1, dtype=np.uint64) * TOTAL // n).astype(np.uint32)


def scaled_table(rng, n):
    counts = rng.integers(1, 3000, size=n).astype(np.int64)
    scaled = (counts * (TOTAL - n)) // counts.sum() + 1
    scaled[0] += TOTAL - scaled.sum()
    cum = np.zeros(n + 1, dtype=np.uint32)
    cum[1:] = np.cumsum(scaled)
    return cum


def coder_cases():
    rng = np.random.default_rng(0xFEED)
    cases = []

    def add(name, tables, idx, syms):
        data = range_encode([int(s) for s in syms], [tables[i] for i in idx])
        cases.append(
            {
                "name": name,
                "tables": [t.tolist() for t in tables],
                "indices": [int(i) for i in idx],
                "symbols": [int(s) for s in syms],
                "bytes_hex": data.hex(),
            }
        )

    add("empty", [uniform_table(4)], [], [])
    add("single_symbol_alphabet", [np.array([0, TOTAL], dtype=np.uint32)], [0] * 64, [0] * 64)
    t = uniform_table(256)
    syms = rng.integers(0, 256, size=500)
    add("uniform256_500", [t], [0] * 500, syms)
    tables = [scaled_table(rng, int(n)) for n in (2, 3, 17, 255, 1024)]
    idx = rng.integers(0, len(tables), size=800)
    syms = [int(rng.integers(0, len(tables[i]) - 1)) for i in idx]
    add("mixed_alphabets_800", tables, idx, syms)
    skew = np.zeros(5, dtype=np.uint32)
    skew[1:] = np.cumsum([TOTAL - 3, 1, 1, 1])
    add("skewed_rare_tail", [skew], [0] * 300, [0] * 297 + [1, 2, 3])
    os.makedirs(OUT, exist_ok=True)
    payload = {"conformance_version": 1, "cases": cases}
    with open(os.path.join(OUT, "coder_cases.json"), "w") as fh:
        json.dump(payload, fh, indent=1)
    print(f"coder_cases.json: {len(cases)} cases")


def container_goldens():
    model = build_model("nano", seed=11)
    model.eval()
    with torch.no_grad():
        model.analysis.stages[3][0].weight.mul_(8.0)
    save_checkpoint(os.path.join(OUT, "golden_nano.npz"), model, meta={"lambda": 128.0, "golden": True})
    rng = np.random.default_rng(2024)
    expected = {}
    for k in range(2):
        img, mask = make_synthetic_pair(rng, 64)
        stream, stats = encode_image(img, mask, model)
        name = f"golden_{k}.roic"
        with open(os.path.join(OUT, name), "wb") as fh:
            fh.write(stream.tobytes())
        np.save(os.path.join(OUT, f"golden_{k}_img.npy"), img)
        np.save(os.path.join(OUT, f"golden_{k}_mask.npy"), mask)
        expected[name] = {"y_chunk_bytes": stats["y_chunk_bytes"], "bpp": stats["bpp"]}
        print(f"{name}: {stats['y_chunk_bytes']}B y-chunk, bpp={stats['bpp']:.4f}")
    with open(os.path.join(OUT, "golden_meta.json"), "w") as fh:
        json.dump(expected, fh, indent=1)


if __name__ == "__main__":
    coder_cases()
    container_goldens()
