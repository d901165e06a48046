"""Hyperprior + causal context entropy model and rate estimation.

The quantized latent is modelled per element as a Gaussian whose mean and
scale come from fusing hyper-decoder features with a 5x5 causal
(masked-convolution) context. Rates are interval masses of the Gaussian
under the unit-width quantization bins, floored so the loss stays finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

SCALE_FLOOR = 0.04
LIKELIHOOD_FLOOR = 2.0 ** -24
LEAKY_SLOPE = 0.2


class GaussianParams(NamedTuple):
    mean: torch.Tensor
    scale: torch.Tensor


@dataclass
class RateEstimate:
    y_bits: float
    z_bits: float
    pixels: int
    side_bits: float = 0.0

    @property
    def bpp(self) -> float:
        return (self.y_bits + self.z_bits + self.side_bits) / self.pixels


def quantize(y, mode, generator=None):
    """Additive U[-0.5, 0.5) noise for training, round-half-away for coding."""
    if mode == "noise":
        noise = torch.rand(y.shape, dtype=y.dtype, device=y.device, generator=generator) - 0.5
        return y + noise
    if mode == "round":
        return round_half_away(y)
    raise ValueError(f"unknown quantize mode {mode!r}")


def round_half_away(y):
    return torch.sign(y) * torch.floor(torch.abs(y) + 0.5)


def softplus_like(x):
    """Smooth positive map 0.5*(x + sqrt(x*x + 1)).

    Chosen over exp-based softplus because sqrt is exactly rounded in IEEE
    arithmetic, so the integer coding kernels can reproduce it bit-for-bit
    without a libm dependency.
    """
    return 0.5 * (x + torch.sqrt(x * x + 1.0))


def gaussian_bits(y_hat, params: GaussianParams):
    """Per-element bits -log2(Phi((d+0.5)/s) - Phi((d-0.5)/s)), floored."""
    d = y_hat - params.mean
    scale = params.scale
    upper = torch.special.ndtr((d + 0.5) / scale)
    lower = torch.special.ndtr((d - 0.5) / scale)
    mass = torch.clamp(upper - lower, min=LIKELIHOOD_FLOOR)
    return -torch.log2(mass)


def rate_estimate(y_hat, params: GaussianParams, z_bits=0.0, pixels=None, side_bits=0.0):
    if y_hat.shape != params.mean.shape or y_hat.shape != params.scale.shape:
        raise ValueError("rate_estimate: parameter dims must match the latent")
    y_bits = float(gaussian_bits(y_hat, params).sum())
    if pixels is None:
        pixels = int(y_hat.shape[-1] * y_hat.shape[-2] * 256)
    return RateEstimate(y_bits=y_bits, z_bits=float(z_bits), pixels=pixels, side_bits=side_bits)


def save_bit_map(path, bits) -> None:
    """Export a per-element bit map as a flat float32 array with a dims
    header: u32 ndim, u32 dims[ndim], then the raster-order values."""
    import numpy as np

    arr = bits.detach().cpu().numpy() if torch.is_tensor(bits) else np.asarray(bits)
    with open(path, "wb") as fh:
        fh.write(np.uint32(arr.ndim).tobytes())
        fh.write(np.asarray(arr.shape, dtype=np.uint32).tobytes())
        fh.write(arr.astype(np.float32).reshape(-1).tobytes())


def load_bit_map(path):
    import numpy as np

    with open(path, "rb") as fh:
        ndim = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
        dims = np.frombuffer(fh.read(4 * ndim), dtype=np.uint32).astype(int)
        flat = np.frombuffer(fh.read(), dtype=np.float32)
    return flat.reshape(tuple(dims))


class MaskedConv2d(nn.Conv2d):
    """Type-A masked convolution: output (i,j) sees only raster-prior inputs."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        _, _, kh, kw = self.weight.shape
        mask = torch.zeros(kh, kw)
        mask[: kh // 2, :] = 1
        mask[kh // 2, : kw // 2] = 1
        self.register_buffer("mask", mask[None, None])

    def forward(self, x):
        return self._conv_forward(x, self.weight * self.mask, self.bias)


class HyperAnalysis(nn.Module):
    def __init__(self, N, M):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(M, N, 3, padding=1),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(N, N, 5, stride=2, padding=2),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(N, N, 5, stride=2, padding=2),
        )

    def forward(self, y):
        return self.net(y)


class HyperSynthesis(nn.Module):
    def __init__(self, N, M):
        super().__init__()
        self.net = nn.Sequential(
            nn.ConvTranspose2d(N, N, 5, stride=2, padding=2, output_padding=1),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.ConvTranspose2d(N, N * 3 // 2, 5, stride=2, padding=2, output_padding=1),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(N * 3 // 2, 2 * M, 3, padding=1),
        )

    def forward(self, z_hat):
        return self.net(z_hat)


class ContextModel(nn.Module):
    """5x5 masked convolution over the already-decoded latent prefix."""

    def __init__(self, M):
        super().__init__()
        self.conv = MaskedConv2d(M, 2 * M, 5, padding=2)

    def forward(self, y_hat):
        return self.conv(y_hat)


class ParamFusion(nn.Module):
    """Concat hyper and context features, fuse with three 1x1 convs.

    The raw scale channel goes through a smooth positive map and sits on a
    floor so coding intervals never collapse.
    """

    def __init__(self, M, scale_floor=SCALE_FLOOR):
        super().__init__()
        self.scale_floor = scale_floor
        cin = 4 * M
        self.net = nn.Sequential(
            nn.Conv2d(cin, 10 * M // 3, 1),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(10 * M // 3, 8 * M // 3, 1),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(8 * M // 3, 2 * M, 1),
        )

    def forward(self, hyper_features, context_features):
        if hyper_features.shape[-2:] != context_features.shape[-2:]:
            raise ValueError("hyper/context features are not spatially aligned")
        out = self.net(torch.cat([hyper_features, context_features], dim=-3))
        mean, scale_raw = out.chunk(2, dim=-3)
        scale = self.scale_floor + softplus_like(scale_raw)
        return GaussianParams(mean=mean, scale=scale)


class FactorizedPrior(nn.Module):
    """Fully-factorized per-channel CDF for the hyper-latent.

    Each channel gets a small monotone network c(x); interval masses are
    sigmoid(c(x+0.5)) - sigmoid(c(x-0.5)).
    """

    def __init__(self, channels, filters=(3, 3, 3), init_scale=10.0):
        super().__init__()
        self.channels = channels
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(dims) - 1))
        self._matrices = nn.ParameterList()
        self._biases = nn.ParameterList()
        self._factors = nn.ParameterList()
        for k in range(len(dims) - 1):
            init = math.log(math.expm1(1.0 / scale / dims[k + 1]))
            self._matrices.append(nn.Parameter(torch.full((channels, dims[k + 1], dims[k]), init)))
            self._biases.append(nn.Parameter(torch.empty(channels, dims[k + 1], 1).uniform_(-0.5, 0.5)))
            if k < len(dims) - 2:
                self._factors.append(nn.Parameter(torch.zeros(channels, dims[k + 1], 1)))

    def logits(self, x):
        """Evaluate the monotone logit chain; x has shape (C, n)."""
        v = x[:, None, :]
        for k, matrix in enumerate(self._matrices):
            v = torch.einsum("cij,cjn->cin", F.softplus(matrix), v) + self._biases[k]
            if k < len(self._factors):
                v = v + torch.tanh(self._factors[k]) * torch.tanh(v)
        return v[:, 0, :]

    def bits(self, z_hat):
        """Per-element bits for a (B, C, h, w) quantized hyper-latent."""
        b, c, h, w = z_hat.shape
        flat = z_hat.permute(1, 0, 2, 3).reshape(c, -1)
        upper = torch.sigmoid(self.logits(flat + 0.5))
        lower = torch.sigmoid(self.logits(flat - 0.5))
        mass = torch.clamp(upper - lower, min=LIKELIHOOD_FLOOR)
        bits = -torch.log2(mass)
        return bits.reshape(c, b, h, w).permute(1, 0, 2, 3)

    def _logits64(self, x):
        """float64 logits without mutating the (float32) parameters."""
        v = x[:, None, :]
        for k, matrix in enumerate(self._matrices):
            v = torch.einsum("cij,cjn->cin", F.softplus(matrix.double()), v)
            v = v + self._biases[k].double()
            if k < len(self._factors):
                a = torch.tanh(self._factors[k].double())
                v = v + a * torch.tanh(v)
        return v[:, 0, :]

    def interval_masses(self, symbols):
        """Masses of unit bins centred on `symbols` for every channel."""
        with torch.no_grad():
            s = torch.as_tensor(symbols, dtype=torch.float64)
            grid = s[None, :].expand(self.channels, -1).contiguous()
            upper = torch.sigmoid(self._logits64(grid + 0.5))
            lower = torch.sigmoid(self._logits64(grid - 0.5))
            return (upper - lower).cpu().numpy()
