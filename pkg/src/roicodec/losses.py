"""Region-weighted distortion, perceptual/style terms and the RDO total.

The individual distortion ops return plain MSE on the [0,1] pixel scale.
``total_loss`` multiplies the distortion group by ``distortion_scale``
(logged in the breakdown) so that rate in bits/pixel and lambda values
in the {64, 128, 512} range form a usable trade-off at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class LossConfig:
    lam: float = 128.0
    k1: float = 0.1
    k2: float = 0.02
    k3: float = 50.0
    distortion_scale: float = 1024.0

    def __post_init__(self):
        if min(self.lam, self.k1, self.k2, self.k3, self.distortion_scale) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class LossBreakdown:
    rate_bpp: float
    d_fg: float
    d_bg: float
    l_per: float
    l_sty: float
    total: float

    def as_record(self) -> dict:
        return {
            "bpp": self.rate_bpp,
            "d_fg": self.d_fg,
            "d_bg": self.d_bg,
            "l_per": self.l_per,
            "l_sty": self.l_sty,
            "total": self.total,
        }


class LossNaNError(FloatingPointError):
    def __init__(self, breakdown):
        super().__init__(f"non-finite loss term: {breakdown}")
        self.breakdown = breakdown


def d_fg(x, x_f, mask):
    """MSE over foreground pixels only, normalized by 3 * |mask|."""
    mask = _mask_like(mask, x)
    count = mask.sum() * x.shape[-3]
    if float(count) == 0:
        raise ValueError("d_fg needs at least one foreground pixel")
    diff = (x - x_f) * mask
    return (diff * diff).sum() / count


def d_bg(x, x_b):
    """Plain full-image MSE against the background decoder output."""
    diff = x - x_b
    return (diff * diff).mean()


def gram_matrix(feat):
    """G = F F^T / (C h w) for a (B, C, h, w) feature map."""
    b, c, h, w = feat.shape
    flat = feat.reshape(b, c, h * w)
    return flat @ flat.transpose(1, 2) / (c * h * w)


def perceptual_loss(x, x_b, extractor):
    fx = extractor(x)
    fy = extractor(x_b)
    terms = [torch.linalg.vector_norm(a - b, dim=(1, 2, 3)).mean() for a, b in zip(fx, fy)]
    return torch.stack(terms).mean()


def style_loss(x, x_b, extractor):
    fx = extractor(x)
    fy = extractor(x_b)
    terms = [
        torch.linalg.matrix_norm(gram_matrix(a) - gram_matrix(b)).mean()
        for a, b in zip(fx, fy)
    ]
    return torch.stack(terms).mean()


def total_loss(rate_bpp, mse_fg, mse_bg, l_per, l_sty, cfg: LossConfig):
    """Assemble lambda*R + scale*(D_FG + k3*D_BG) + k1*L_per + k2*L_sty.

    Returns (total tensor, LossBreakdown). The breakdown logs the scaled
    distortion terms so that total reproduces exactly from the parts.
    """
    sd_fg = cfg.distortion_scale * mse_fg
    sd_bg = cfg.distortion_scale * mse_bg
    total = cfg.lam * rate_bpp + sd_fg + cfg.k3 * sd_bg + cfg.k1 * l_per + cfg.k2 * l_sty

    def val(t):
        return float(t.detach()) if torch.is_tensor(t) else float(t)

    # breakdown bookkeeping in double precision: the logged total is the
    # exact recombination of the logged parts regardless of graph dtype
    parts = [val(sd_fg), val(sd_bg), val(l_per), val(l_sty)]
    breakdown = LossBreakdown(
        rate_bpp=val(rate_bpp),
        d_fg=parts[0],
        d_bg=parts[1],
        l_per=parts[2],
        l_sty=parts[3],
        total=cfg.lam * val(rate_bpp) + parts[0] + cfg.k3 * parts[1] + cfg.k1 * parts[2] + cfg.k2 * parts[3],
    )
    for name, val in breakdown.as_record().items():
        if val != val or val in (float("inf"), float("-inf")):
            raise LossNaNError(breakdown)
    return total, breakdown


class FrozenFeaturePyramid(nn.Module):
    """Fixed-seed random conv pyramid standing in for a pretrained extractor.

    Weights are frozen at construction; the interface (image in, list of
    feature maps out) matches a pretrained classification backbone, so a
    real one can be swapped in behind the same call.
    """

    def __init__(self, channels=(16, 32, 64, 96, 128), seed=0x5EED):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        cin = 3
        for cout in channels:
            convl = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            with torch.no_grad():
                convl.weight.copy_(torch.randn(convl.weight.shape, generator=gen) * 0.2)
                convl.bias.zero_()
            layers.append(convl)
            cin = cout
        self.stages = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = torch.tanh(stage(x))
            feats.append(x)
        return feats


def _mask_like(mask, x):
    if not torch.is_tensor(mask):
        mask = torch.as_tensor(mask)
    mask = mask.to(x.device, x.dtype)
    while mask.dim() < x.dim():
        mask = mask.unsqueeze(0) if mask.dim() < x.dim() - 1 else mask.unsqueeze(-3)
    if mask.shape[-2:] != x.shape[-2:]:
        raise ValueError("mask spatial dims must match the image")
    return mask
