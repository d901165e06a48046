"""Image/mask ingestion, binarization, padding and mask pyramids.

All pixel data lives in float arrays scaled to [0, 1]. Masks are strictly
binary at full resolution; downsampled pyramid levels keep soft (average
pooled) values because the attention networks consume soft region priors.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

BINARIZE_THRESHOLD = 0.5
PAD_MULTIPLE = 64


class DataError(ValueError):
    """Raised on malformed inputs (missing files, mismatched dims)."""


@dataclass
class ImageTensor:
    """H x W x 3 float64 array in [0, 1]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise DataError(f"expected HxWx3 image, got shape {self.data.shape}")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise DataError("image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class RoiMask:
    """H x W binary array; foreground = 1. `ratio` is foreground fraction."""

    data: np.ndarray
    ratio: float = field(init=False)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DataError(f"expected HxW mask, got shape {self.data.shape}")
        vals = np.unique(self.data)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise DataError("mask values must be exactly 0 or 1")
        self.ratio = float(self.data.mean()) if self.data.size else 0.0

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class MaskPyramid:
    """Average-pooled mask at scales 1/2, 1/4, 1/8, 1/16 (soft values)."""

    scales: tuple[int, ...]
    levels: list[np.ndarray]

    def level_for_scale(self, scale: int) -> np.ndarray:
        return self.levels[self.scales.index(scale)]


def binarize(mask: np.ndarray, threshold: float = BINARIZE_THRESHOLD) -> np.ndarray:
    """Map grayscale to {0,1}; values >= threshold become foreground."""
    return (np.asarray(mask, dtype=np.float64) >= threshold).astype(np.float64)


def load_image(path: str | os.PathLike) -> ImageTensor:
    if not os.path.exists(path):
        raise DataError(f"image file not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return ImageTensor(arr)


def load_mask(path: str | os.PathLike) -> RoiMask:
    if not os.path.exists(path):
        raise DataError(f"mask file not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return RoiMask(binarize(arr))


def load_pair(image_path: str | os.PathLike, mask_path: str | os.PathLike) -> tuple[ImageTensor, RoiMask]:
    """Load an image and its ROI mask, binarizing the mask at 0.5."""
    img = load_image(image_path)
    mask = load_mask(mask_path)
    if (mask.height, mask.width) != (img.height, img.width):
        raise DataError(
            f"image/mask dimension mismatch: {(img.height, img.width)} vs {(mask.height, mask.width)}"
        )
    return img, mask


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def save_mask(mask: np.ndarray, path: str | os.PathLike) -> None:
    Image.fromarray((np.asarray(mask) > 0.5).astype(np.uint8) * 255).save(path)


def read_manifest(path: str | os.PathLike) -> list[tuple[str, str]]:
    """Parse a dataset manifest: one `image_path<TAB>mask_path` per line."""
    if not os.path.exists(path):
        raise DataError(f"dataset manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'image<TAB>mask'")
            img_p, mask_p = (p if os.path.isabs(p) else os.path.join(base, p) for p in parts)
            pairs.append((img_p, mask_p))
    return pairs


def filter_by_ratio(
    pairs: list[tuple[ImageTensor, RoiMask]], lo: float = 0.08, hi: float = 0.8
) -> list[tuple[ImageTensor, RoiMask]]:
    """Keep pairs whose foreground ratio lies in [lo, hi]."""
    if not (0.0 <= lo < hi <= 1.0):
        raise DataError(f"invalid ratio bounds [{lo}, {hi}]")
    return [(img, mask) for img, mask in pairs if lo <= mask.ratio <= hi]


def pad_to_multiple(
    img: np.ndarray, m: int = PAD_MULTIPLE
) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """Edge-replicate pad H and W up to the next multiple of ``m``.

    Returns the padded array and a crop box (top, left, height, width)
    that restores the original exactly.
    """
    if m <= 0:
        raise DataError("pad multiple must be positive")
    arr = np.asarray(img)
    h, w = arr.shape[:2]
    ph = (m - h % m) % m
    pw = (m - w % m) % m
    pad_spec = [(0, ph), (0, pw)] + [(0, 0)] * (arr.ndim - 2)
    padded = np.pad(arr, pad_spec, mode="edge") if (ph or pw) else arr.copy()
    return padded, (0, 0, h, w)


def crop_to_box(img: np.ndarray, box: tuple[int, int, int, int]) -> np.ndarray:
    top, left, h, w = box
    return np.asarray(img)[top : top + h, left : left + w]


def build_mask_pyramid(mask: RoiMask | np.ndarray, scales: tuple[int, ...] = (2, 4, 8, 16)) -> MaskPyramid:
    """Average-pool the mask down to each requested scale.

    Soft values are kept on purpose: the region attention network turns
    them into smooth weights, and re-binarizing would discard boundary
    information.
    """
    arr = mask.data if isinstance(mask, RoiMask) else np.asarray(mask, dtype=np.float64)
    h, w = arr.shape[-2:]
    lead = arr.shape[:-2]
    top = max(scales)
    if h % top or w % top:
        raise DataError(f"mask dims {(h, w)} not divisible by largest scale {top}")
    levels = []
    for s in scales:
        pooled = arr.reshape(lead + (h // s, s, w // s, s)).mean(axis=(-3, -1))
        levels.append(pooled)
    return MaskPyramid(scales=tuple(scales), levels=levels)
