"""Analysis/synthesis transforms and the mask-guided attention blocks.

The encoder is a 4-stage strided-conv backbone; mask-guided feature
enhancement (region attention followed by frequency/spatial collaborative
attention) is inserted after the stride-4 and stride-16 stages, replacing
the window-attention positions of the original backbone. Two independent
decoders mirror the encoder; the foreground decoder receives the attention
map as-is and the background decoder receives its complement.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

# Incremented on every region-attention forward; lets tests assert that
# explicit-gating models perform no region-attention work at all.
RAA_FORWARD_CALLS = 0


PROFILES = {
    "full": dict(N=192, M=320),
    "toy": dict(N=64, M=96),
    "nano": dict(N=24, M=32),
}
PROFILE_IDS = {"full": 0, "toy": 1, "nano": 2}


@dataclass
class TransformConfig:
    N: int = 192
    M: int = 320
    mgfe_insertion_points: tuple[int, ...] = (2, 4)
    sa_large_kernel: int = 11
    sa_small_kernel: int = 3
    raa_hidden: int = 16
    rb_count: int = 2
    profile: str = "full"

    def __post_init__(self):
        if self.N <= 0 or self.M <= 0:
            raise ValueError("channel counts must be positive")
        if self.sa_large_kernel % 2 == 0 or self.sa_small_kernel % 2 == 0:
            raise ValueError("spatial-attention kernels must be odd")

    @classmethod
    def from_profile(cls, profile: str, **overrides) -> "TransformConfig":
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        kw = dict(PROFILES[profile])
        kw.update(overrides)
        return cls(profile=profile, **kw)

    @property
    def profile_id(self) -> int:
        return PROFILE_IDS.get(self.profile, 255)


def conv(cin, cout, kernel=5, stride=2):
    return nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2)


def deconv(cin, cout, kernel=5, stride=2):
    return nn.ConvTranspose2d(
        cin, cout, kernel, stride=stride, padding=kernel // 2, output_padding=stride - 1
    )


class ResidualBottleneck(nn.Module):
    """1x1 -> 3x3 -> 1x1 bottleneck with a skip connection."""

    def __init__(self, channels):
        super().__init__()
        mid = max(channels // 2, 4)
        self.body = nn.Sequential(
            nn.Conv2d(channels, mid, 1),
            nn.ReLU(),
            nn.Conv2d(mid, mid, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(mid, channels, 1),
        )

    def forward(self, x):
        return x + self.body(x)


class RegionAttention(nn.Module):
    """Turn a hard binary mask into a soft attention map and apply it.

    att = sigmoid(conv3x3(act(conv3x3(mask)))), returned features are
    f*att + f for the foreground variant and f*(1-att) + f for the
    background (invert=True) variant.
    """

    def __init__(self, hidden=16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(1, hidden, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(hidden, 1, 3, padding=1),
        )

    def attention(self, mask_level):
        if mask_level.dim() == 2:
            mask_level = mask_level[None, None]
        elif mask_level.dim() == 3:
            mask_level = mask_level[:, None]
        return torch.sigmoid(self.net(mask_level))

    def forward(self, mask_level, f, invert=False):
        global RAA_FORWARD_CALLS
        RAA_FORWARD_CALLS += 1
        att = self.attention(mask_level.to(f.dtype))
        if att.shape[-2:] != f.shape[-2:]:
            raise ValueError(f"mask level {tuple(att.shape[-2:])} vs features {tuple(f.shape[-2:])}")
        if invert:
            att = 1.0 - att
        return f * att + f


class FrequencyAttention(nn.Module):
    """Amplitude-guided phase modulation in the half spectrum.

    The real-input FFT decomposes each channel into amplitude and phase;
    channel weights derived from the average-pooled amplitude rescale the
    phase, which is then transformed by two 1x1 convolutions before the
    spectrum is recombined and transformed back.
    """

    def __init__(self, channels):
        super().__init__()
        self.phase_net = nn.Sequential(
            nn.Conv2d(channels, channels, 1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(channels, channels, 1),
        )

    def channel_attention(self, amp):
        # scaled so that a flat amplitude profile yields weights == 1
        pooled = amp.mean(dim=(-2, -1))
        return torch.softmax(pooled, dim=-1)[..., None, None] * amp.shape[-3]

    def forward(self, f):
        h, w = f.shape[-2:]
        spec = torch.fft.rfft2(f)
        amp = torch.abs(spec)
        phase = torch.angle(spec)
        att = self.channel_attention(amp)
        phase = self.phase_net(phase * att)
        spec = torch.polar(amp, phase)
        return torch.fft.irfft2(spec, s=(h, w))


class MultiScaleResidualBlock(nn.Module):
    """Parallel depthwise 3x3 and 11x11 branches, summed onto a skip."""

    def __init__(self, channels, small_kernel=3, large_kernel=11):
        super().__init__()
        self.small = nn.Sequential(
            nn.Conv2d(channels, channels, small_kernel, padding=small_kernel // 2, groups=channels),
            nn.Conv2d(channels, channels, 1),
        )
        self.large = nn.Sequential(
            nn.Conv2d(channels, channels, large_kernel, padding=large_kernel // 2, groups=channels),
            nn.Conv2d(channels, channels, 1),
        )

    def forward(self, x):
        return x + self.small(x) + self.large(x)


class SpatialAttention(nn.Module):
    """Residual bottlenecks + multi-scale block + sigmoid pixel attention.

    The final attention conv is zero-initialized so the map starts at 0.5
    everywhere.
    """

    def __init__(self, channels, small_kernel=3, large_kernel=11, rb_count=2):
        super().__init__()
        self.body = nn.Sequential(
            *[ResidualBottleneck(channels) for _ in range(rb_count)],
            MultiScaleResidualBlock(channels, small_kernel, large_kernel),
        )
        self.att_conv = nn.Conv2d(channels, 1, 3, padding=1)
        nn.init.zeros_(self.att_conv.weight)
        nn.init.zeros_(self.att_conv.bias)

    def attention(self, feats):
        return torch.sigmoid(self.att_conv(feats))

    def forward(self, f):
        feats = self.body(f)
        return feats * self.attention(feats)


class ChannelAttention(nn.Module):
    """Squeeze-and-excitation: pooled 1x1 bottleneck with sigmoid gains."""

    def __init__(self, channels, reduction=4):
        super().__init__()
        mid = max(channels // reduction, 4)
        self.net = nn.Sequential(
            nn.Conv2d(channels, mid, 1),
            nn.ReLU(),
            nn.Conv2d(mid, channels, 1),
            nn.Sigmoid(),
        )

    def forward(self, x):
        return x * self.net(x.mean(dim=(-2, -1), keepdim=True))


class FreqSpatialAttention(nn.Module):
    """Fuse frequency and spatial attention branches onto a residual path."""

    def __init__(self, channels, small_kernel=3, large_kernel=11, rb_count=2):
        super().__init__()
        self.freq = FrequencyAttention(channels)
        self.spat = SpatialAttention(channels, small_kernel, large_kernel, rb_count)
        self.fuse = nn.Conv2d(2 * channels, channels, 1)
        self.ca = ChannelAttention(channels)

    def forward(self, f_prime):
        att = torch.cat([self.freq(f_prime), self.spat(f_prime)], dim=-3)
        return f_prime + self.ca(self.fuse(att))


class MaskGuidedEnhancement(nn.Module):
    """Region attention followed by frequency/spatial attention.

    With ``use_raa=False`` (the explicit-gating ablation) the region
    attention block is absent and the mask input is ignored.
    """

    def __init__(self, channels, cfg: TransformConfig, use_raa=True):
        super().__init__()
        self.raa = RegionAttention(cfg.raa_hidden) if use_raa else None
        self.fsca = FreqSpatialAttention(
            channels, cfg.sa_small_kernel, cfg.sa_large_kernel, cfg.rb_count
        )

    def forward(self, mask_level, f, invert=False):
        if self.raa is not None:
            f = self.raa(mask_level, f, invert)
        return self.fsca(f)


class AnalysisTransform(nn.Module):
    """Four stride-2 stages mapping an image to M latent channels at 1/16."""

    def __init__(self, cfg: TransformConfig, use_raa=True):
        super().__init__()
        N, M = cfg.N, cfg.M
        self.cfg = cfg
        chans = [3, N, N, N, M]
        self.stages = nn.ModuleList()
        for i in range(4):
            blocks = [conv(chans[i], chans[i + 1])]
            if i < 3:
                blocks += [nn.LeakyReLU(0.2), ResidualBottleneck(chans[i + 1])]
            self.stages.append(nn.Sequential(*blocks))
        self.mgfe = nn.ModuleDict(
            {
                str(p): MaskGuidedEnhancement(chans[p], cfg, use_raa)
                for p in cfg.mgfe_insertion_points
            }
        )

    def forward(self, x, pyramid):
        if x.shape[-1] % 16 or x.shape[-2] % 16:
            raise ValueError("analysis input must be padded to a multiple of 16")
        f = x
        for i, stage in enumerate(self.stages, start=1):
            f = stage(f)
            key = str(i)
            if key in self.mgfe:
                level = _pyramid_level(pyramid, 2**i, f)
                f = self.mgfe[key](level, f, invert=False)
        return f


class SynthesisTransform(nn.Module):
    """Mirror decoder; ``invert=True`` builds the background variant."""

    def __init__(self, cfg: TransformConfig, invert=False, use_raa=True):
        super().__init__()
        N, M = cfg.N, cfg.M
        self.cfg = cfg
        self.invert = invert
        chans = [M, N, N, N, 3]
        self.stages = nn.ModuleList()
        for i in range(4):
            blocks = [deconv(chans[i], chans[i + 1])]
            if i < 3:
                blocks += [nn.LeakyReLU(0.2), ResidualBottleneck(chans[i + 1])]
            self.stages.append(nn.Sequential(*blocks))
        # same resolutions as the encoder insertions, traversed in reverse
        self.mgfe_scales = tuple(2**p for p in cfg.mgfe_insertion_points)
        self.mgfe = nn.ModuleDict(
            {
                str(2**p): MaskGuidedEnhancement(chans[4 - p], cfg, use_raa)
                for p in cfg.mgfe_insertion_points
            }
        )

    def forward(self, y_hat, pyramid):
        f = y_hat
        scale = 16
        for stage in self.stages:
            key = str(scale)
            if key in self.mgfe:
                level = _pyramid_level(pyramid, scale, f)
                f = self.mgfe[key](level, f, invert=self.invert)
            f = stage(f)
            scale //= 2
        return f


def _pyramid_level(pyramid, scale, f):
    """Fetch the pyramid level for ``scale`` as a tensor on f's device."""
    if hasattr(pyramid, "level_for_scale"):
        level = pyramid.level_for_scale(scale)
    else:
        level = pyramid[scale]
    if not torch.is_tensor(level):
        level = torch.as_tensor(level)
    level = level.to(device=f.device, dtype=f.dtype)
    if level.shape[-2:] != f.shape[-2:]:
        raise ValueError(
            f"pyramid level for scale {scale} has dims {tuple(level.shape[-2:])}, "
            f"features have {tuple(f.shape[-2:])}"
        )
    return level


def fuse_outputs(x_f, x_b, mask):
    """Per-pixel selection: foreground where mask=1, background elsewhere."""
    if torch.is_tensor(x_f):
        mask = mask if torch.is_tensor(mask) else torch.as_tensor(mask, dtype=x_f.dtype)
        mask = mask.to(device=x_f.device, dtype=x_f.dtype)
        while mask.dim() < x_f.dim():
            mask = mask.unsqueeze(0) if mask.dim() < x_f.dim() - 1 else mask.unsqueeze(-3)
        if mask.shape[-2:] != x_f.shape[-2:] or x_f.shape != x_b.shape:
            raise ValueError("fuse_outputs: dimension mismatch")
        return x_f * mask + x_b * (1.0 - mask)
    import numpy as np

    x_f = np.asarray(x_f)
    x_b = np.asarray(x_b)
    mask = np.asarray(mask)
    if mask.ndim == x_f.ndim - 1:
        mask = mask[..., None] if x_f.shape[-1] in (1, 3) else mask[None]
    if x_f.shape != x_b.shape:
        raise ValueError("fuse_outputs: dimension mismatch")
    return x_f * mask + x_b * (1.0 - mask)
