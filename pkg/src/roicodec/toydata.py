"""Deterministic synthetic image/mask pairs for desk-scale experiments.

Scenes are a smooth, mildly textured background with one to three
high-frequency foreground shapes; the union of the shapes is the ROI
mask. Foregrounds carry most of the detail so region-weighted coding has
something to trade off.
"""

from __future__ import annotations

import os

import numpy as np

from .dataio import save_image, save_mask


def _smooth_noise(rng, h, w, cells, amp):
    grid = rng.standard_normal((3, cells, cells))
    ys = np.linspace(0, cells - 1, h)
    xs = np.linspace(0, cells - 1, w)
    out = np.empty((h, w, 3))
    for c in range(3):
        y0 = np.floor(ys).astype(int)
        x0 = np.floor(xs).astype(int)
        y1 = np.minimum(y0 + 1, cells - 1)
        x1 = np.minimum(x0 + 1, cells - 1)
        fy = (ys - y0)[:, None]
        fx = (xs - x0)[None, :]
        g = grid[c]
        out[..., c] = (
            g[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
            + g[np.ix_(y1, x0)] * fy * (1 - fx)
            + g[np.ix_(y0, x1)] * (1 - fy) * fx
            + g[np.ix_(y1, x1)] * fy * fx
        )
    return amp * out


def make_synthetic_pair(rng: np.random.Generator, size: int = 128):
    """One (image, mask) pair with mask ratio inside [0.08, 0.8]."""
    h = w = int(size)
    base = rng.uniform(0.25, 0.75, size=3)[None, None, :]
    img = base + _smooth_noise(rng, h, w, cells=5, amp=0.12)
    img += _smooth_noise(rng, h, w, cells=16, amp=0.04)

    mask = np.zeros((h, w), dtype=np.float64)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0.2, 0.8, 2) * (h, w)
        ry = rng.uniform(0.1, 0.3) * h
        rx = rng.uniform(0.1, 0.3) * w
        if rng.random() < 0.5:
            shape = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            shape = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        mask[shape] = 1.0

    ratio = mask.mean()
    if not (0.08 <= ratio <= 0.8):
        return make_synthetic_pair(rng, size)

    # textured foreground: two stripe harmonics plus mild noise, so the
    # ROI carries learnable high-frequency structure
    angle = rng.uniform(0, np.pi)
    freq = rng.uniform(0.25, 0.7)
    u = np.cos(angle) * xx + np.sin(angle) * yy
    v = -np.sin(angle) * xx + np.cos(angle) * yy
    stripes = 0.5 + 0.35 * np.sin(freq * u) + 0.15 * np.sin(2.3 * freq * v + 1.0)
    tint = rng.uniform(0.3, 1.0, size=3)[None, None, :]
    fg = 0.6 * stripes[..., None] * tint + 0.2 + rng.standard_normal((h, w, 3)) * 0.04
    img = np.where(mask[..., None] > 0.5, fg, img)
    return np.clip(img, 0.0, 1.0), mask


def make_synthetic_dataset(count: int, size: int = 128, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [make_synthetic_pair(rng, size) for _ in range(count)]


def write_synthetic_dataset(out_dir, count: int, size: int = 128, seed: int = 0) -> str:
    """Write PNGs + manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i, (img, mask) in enumerate(make_synthetic_dataset(count, size, seed)):
        img_name = f"img_{i:04d}.png"
        mask_name = f"mask_{i:04d}.png"
        save_image(img, os.path.join(out_dir, img_name))
        save_mask(mask, os.path.join(out_dir, mask_name))
        lines.append(f"{img_name}\t{mask_name}")
    manifest = os.path.join(out_dir, "manifest.tsv")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


def parse_synthetic_spec(spec: str):
    """Parse 'synthetic:count=64,size=128,seed=0' dataset specs."""
    if not spec.startswith("synthetic:"):
        return None
    kw = {"count": 64, "size": 128, "seed": 0}
    body = spec.split(":", 1)[1]
    for part in filter(None, body.split(",")):
        key, _, val = part.partition("=")
        if key not in kw:
            raise ValueError(f"unknown synthetic dataset key {key!r}")
        kw[key] = int(val)
    return kw
