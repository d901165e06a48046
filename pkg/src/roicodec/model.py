"""Composite codec model (transforms + entropy nets) and checkpoint I/O.

Checkpoints are single .npz archives: parameter arrays keyed by their
hierarchical state-dict names under ``param/``, a mandatory JSON config
record with a format version, the quantized z coding tables (so decode
does not depend on re-deriving them in float), and optional optimizer +
RNG state for exact training resume.
"""

from __future__ import annotations

import io
import json

import numpy as np
import torch
from torch import nn

from . import kernels
from .dataio import binarize
from .entropy import (
    ContextModel,
    FactorizedPrior,
    HyperAnalysis,
    HyperSynthesis,
    ParamFusion,
    gaussian_bits,
    quantize,
)
from .transforms import (
    AnalysisTransform,
    SynthesisTransform,
    TransformConfig,
    fuse_outputs,
)

CHECKPOINT_FORMAT = 1


def explicit_gate(y, mask_level):
    """Hard gating y * mask: the explicit bit-allocation baseline."""
    if not torch.is_tensor(mask_level):
        mask_level = torch.as_tensor(np.asarray(mask_level), dtype=y.dtype)
    mask_level = mask_level.to(y.device, y.dtype)
    while mask_level.dim() < y.dim():
        if mask_level.dim() < y.dim() - 1:
            mask_level = mask_level.unsqueeze(0)
        else:
            mask_level = mask_level.unsqueeze(-3)  # broadcast over channels
    if mask_level.shape[-2:] != y.shape[-2:]:
        raise ValueError("gate mask must be at latent resolution")
    return y * mask_level


def latent_gate_mask(pyramid):
    """Binarized 1/16-scale mask used for explicit gating."""
    level = pyramid.level_for_scale(16) if hasattr(pyramid, "level_for_scale") else pyramid[16]
    if torch.is_tensor(level):
        level = level.detach().cpu().numpy()
    return binarize(np.asarray(level))


class RoiCodec(nn.Module):
    """End-to-end ROI codec; mode selects implicit or explicit allocation.

    Implicit: mask-guided attention in all transforms plus dual decoders.
    Explicit: no region attention, single decoder, latents hard-gated by
    the binarized latent-resolution mask before quantization.
    """

    def __init__(self, cfg: TransformConfig, mode: str = "implicit"):
        super().__init__()
        if mode not in ("implicit", "explicit"):
            raise ValueError(f"unknown mode {mode!r}")
        self.cfg = cfg
        self.mode = mode
        use_raa = mode == "implicit"
        self.analysis = AnalysisTransform(cfg, use_raa=use_raa)
        self.synthesis_fg = SynthesisTransform(cfg, invert=False, use_raa=use_raa)
        self.synthesis_bg = SynthesisTransform(cfg, invert=True) if use_raa else None
        self.hyper_a = HyperAnalysis(cfg.N, cfg.M)
        self.hyper_s = HyperSynthesis(cfg.N, cfg.M)
        self.context = ContextModel(cfg.M)
        self.fusion = ParamFusion(cfg.M)
        self.z_prior = FactorizedPrior(cfg.N)
        self._z_tables = None
        self.trained_steps = 0

    @property
    def profile_id(self) -> int:
        return self.cfg.profile_id

    # ---- pipeline pieces used by the codec module ----

    def hyper_analysis(self, y):
        return self.hyper_a(y)

    def hyper_synthesis(self, z_hat):
        return self.hyper_s(z_hat)

    def encode_latent(self, xt, pyramid, mask_pad=None):
        y = self.analysis(xt, pyramid)
        if self.mode == "explicit":
            y = explicit_gate(y, latent_gate_mask(pyramid))
        return y

    def reconstruct(self, y_hat, pyramid, mask_pad):
        x_f = self.synthesis_fg(y_hat, pyramid)
        if self.synthesis_bg is None:
            return x_f, None, x_f
        x_b = self.synthesis_bg(y_hat, pyramid)
        x_hat = fuse_outputs(x_f, x_b, torch.as_tensor(mask_pad, dtype=x_f.dtype))
        return x_f, x_b, x_hat

    def forward(self, xt, pyramid, mask_t):
        """Training pass with additive-noise quantization; returns a dict."""
        y = self.encode_latent(xt, pyramid)
        z = self.hyper_a(y)
        z_hat = quantize(z, "noise")
        y_hat = quantize(y, "noise")
        params = self.fusion(self.hyper_s(z_hat), self.context(y_hat))
        y_bits = gaussian_bits(y_hat, params)
        z_bits = self.z_prior.bits(z_hat)
        x_f = self.synthesis_fg(y_hat, pyramid)
        if self.synthesis_bg is not None:
            x_b = self.synthesis_bg(y_hat, pyramid)
            x_hat = fuse_outputs(x_f, x_b, mask_t)
        else:
            x_b = None
            x_hat = x_f
        pixels = xt.shape[0] * xt.shape[-1] * xt.shape[-2]
        bpp = (y_bits.sum() + z_bits.sum()) / pixels
        return {
            "y": y,
            "y_hat": y_hat,
            "z_hat": z_hat,
            "params": params,
            "x_f": x_f,
            "x_b": x_b,
            "x_hat": x_hat,
            "bpp": bpp,
            "y_bits": y_bits,
            "z_bits": z_bits,
        }

    # ---- coding-side exports ----

    def coding_weights(self) -> kernels.CodingWeights:
        conv = self.context.conv
        masked = (conv.weight * conv.mask).detach().double().numpy()
        f1, f2, f3 = self.fusion.net[0], self.fusion.net[2], self.fusion.net[4]
        sq = lambda c: c.weight.detach().double().numpy()[:, :, 0, 0]
        bias = lambda c: c.bias.detach().double().numpy()
        return kernels.CodingWeights(
            ctx_w=masked,
            ctx_b=conv.bias.detach().double().numpy(),
            f1_w=sq(f1),
            f1_b=bias(f1),
            f2_w=sq(f2),
            f2_b=bias(f2),
            f3_w=sq(f3),
            f3_b=bias(f3),
        )

    def z_tables(self) -> np.ndarray:
        """Static integer CDF tables for the hyper-latent channels."""
        if self._z_tables is None:
            self.update_entropy_tables()
        return self._z_tables

    def update_entropy_tables(self) -> None:
        from .codec import build_static_tables  # local import avoids a cycle

        symbols = np.arange(-kernels.SYM_MAX, kernels.SYM_MAX + 1, dtype=np.float64)
        masses = self.z_prior.interval_masses(symbols)
        self._z_tables = build_static_tables(masses)

    def invalidate_tables(self) -> None:
        self._z_tables = None


def build_model(profile="toy", mode="implicit", seed=0, **cfg_overrides) -> RoiCodec:
    torch.manual_seed(seed)
    cfg = TransformConfig.from_profile(profile, **cfg_overrides)
    return RoiCodec(cfg, mode=mode)


# ---------------------------------------------------------------------------
# checkpoint archive
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: RoiCodec, meta=None, optimizer=None, rng_state=None):
    arrays = {}
    for name, tensor in model.state_dict().items():
        arrays[f"param/{name}"] = tensor.detach().cpu().numpy()
    record = {
        "format_version": CHECKPOINT_FORMAT,
        "profile": model.cfg.profile,
        "N": model.cfg.N,
        "M": model.cfg.M,
        "mgfe_insertion_points": list(model.cfg.mgfe_insertion_points),
        "sa_large_kernel": model.cfg.sa_large_kernel,
        "sa_small_kernel": model.cfg.sa_small_kernel,
        "mode": model.mode,
        "trained_steps": model.trained_steps,
    }
    if meta:
        record.update(meta)
    arrays["meta"] = np.frombuffer(json.dumps(record).encode(), dtype=np.uint8)
    arrays["tables/z_cum"] = model.z_tables()
    if optimizer is not None:
        state = optimizer.state_dict()
        arrays["opt/groups"] = np.frombuffer(
            json.dumps(state["param_groups"]).encode(), dtype=np.uint8
        )
        for pid, pstate in state["state"].items():
            for key, val in pstate.items():
                tag = f"opt/state/{pid}/{key}"
                if torch.is_tensor(val):
                    arrays[tag] = val.detach().cpu().numpy()
                else:
                    arrays[tag] = np.asarray(val)
    if rng_state is not None:
        arrays["rng/torch"] = rng_state["torch"].numpy()
        arrays["rng/numpy"] = np.frombuffer(json.dumps(rng_state["numpy"]).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, map_mode=None):
    """Load a checkpoint; returns (model, meta, aux).

    aux holds optimizer/rng arrays for resume; ``map_mode`` overrides the
    stored mode (used by ablation tooling, parameters permitting).
    """
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    if "meta" not in arrays:
        raise ValueError(f"{path}: not a codec checkpoint (missing meta record)")
    meta = json.loads(bytes(arrays["meta"].tobytes()).decode())
    if meta.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {meta.get('format_version')}")
    cfg = TransformConfig.from_profile(
        meta["profile"],
        N=meta["N"],
        M=meta["M"],
        mgfe_insertion_points=tuple(meta["mgfe_insertion_points"]),
        sa_large_kernel=meta["sa_large_kernel"],
        sa_small_kernel=meta["sa_small_kernel"],
    )
    model = RoiCodec(cfg, mode=map_mode or meta["mode"])
    state = {
        name[len("param/") :]: torch.from_numpy(arr.copy())
        for name, arr in arrays.items()
        if name.startswith("param/")
    }
    model.load_state_dict(state)
    model.trained_steps = int(meta.get("trained_steps", 0))
    if "tables/z_cum" in arrays:
        model._z_tables = arrays["tables/z_cum"].astype(np.uint32)
    aux = {k: v for k, v in arrays.items() if k.startswith(("opt/", "rng/"))}
    return model, meta, aux
