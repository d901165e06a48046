"""Training loop: Adam, two-step LR schedule, curves and checkpoints.

Runs are deterministic given a seed: data order comes from a dedicated
numpy generator, quantization noise from the (seeded) torch RNG, and
checkpoints carry both states plus the optimizer so a resumed run
reproduces the next step bitwise.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .dataio import DataError, build_mask_pyramid, load_pair, read_manifest
from .losses import FrozenFeaturePyramid, LossConfig, LossNaNError, d_bg, d_fg, perceptual_loss, style_loss, total_loss
from .model import build_model, explicit_gate, load_checkpoint, save_checkpoint
from .toydata import make_synthetic_dataset, parse_synthetic_spec

__all__ = ["TrainConfig", "train_step", "explicit_gate", "run_training", "load_dataset"]

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr_initial: float = 1e-4
    lr_final: float = 5e-5
    lr_drop_at: float = 350.0 / 450.0
    crop: int = 128
    lam: float = 128.0
    mode: str = "implicit"
    profile: str = "toy"
    seed: int = 0
    grad_clip: float = 1.0
    log_every: int = 10
    checkpoint_every: int = 10
    eval_every: int = 1
    eval_fraction: float = 0.125
    distortion_scale: float = 1024.0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr_final > self.lr_initial:
            raise ValueError("lr_final must not exceed lr_initial")
        if self.crop % 64:
            raise ValueError("crop must be a multiple of 64")
        if self.mode not in ("implicit", "explicit"):
            raise ValueError(f"unknown training mode {self.mode!r}")

    def lr_at(self, epoch: int) -> float:
        return self.lr_final if epoch / self.epochs >= self.lr_drop_at else self.lr_initial

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam, distortion_scale=self.distortion_scale)


def load_dataset(spec, crop=None):
    """Materialize (image, mask) numpy pairs from a manifest path or a
    'synthetic:...' spec; pairs are ratio-filtered per the training rule."""
    synth = parse_synthetic_spec(spec) if isinstance(spec, str) else None
    if synth is not None:
        pairs = make_synthetic_dataset(**synth)
    elif isinstance(spec, str):
        raw = read_manifest(spec)
        pairs = []
        for img_p, mask_p in raw:
            img, mask = load_pair(img_p, mask_p)
            pairs.append((img.data, mask.data))
    else:
        pairs = [(np.asarray(i, dtype=np.float64), np.asarray(m, dtype=np.float64)) for i, m in spec]
    kept = [(i, m) for i, m in pairs if 0.08 <= m.mean() <= 0.8]
    if crop:
        kept = [(i, m) for i, m in kept if i.shape[0] >= crop and i.shape[1] >= crop]
    if not kept:
        raise DataError("dataset is empty after ratio/size filtering")
    return kept


def sample_crop(img, mask, crop, rng, max_tries=8):
    """Random crop that keeps at least one foreground pixel, else None."""
    h, w = mask.shape
    for _ in range(max_tries):
        top = int(rng.integers(0, h - crop + 1))
        left = int(rng.integers(0, w - crop + 1))
        mc = mask[top : top + crop, left : left + crop]
        if mc.sum() > 0:
            return img[top : top + crop, left : left + crop], mc
    return None


def make_batch(pairs, indices, crop, rng):
    imgs, masks = [], []
    for idx in indices:
        img, mask = pairs[idx]
        got = sample_crop(img, mask, crop, rng)
        if got is None:
            continue
        imgs.append(got[0])
        masks.append(got[1])
    if not imgs:
        return None
    x = torch.from_numpy(np.stack(imgs).transpose(0, 3, 1, 2)).float()
    m = torch.from_numpy(np.stack(masks)).float()
    return x, m


def train_step(batch, model, extractor, optimizer, cfg: TrainConfig):
    """One adaptive-moment step on the full objective; returns breakdown."""
    x, m = batch
    pyramid = build_mask_pyramid(_batch_pyramid_source(m))
    pyr = {s: torch.from_numpy(lv).float() for s, lv in zip(pyramid.scales, pyramid.levels)}
    out = model(x, _TorchPyramid(pyr), m)
    x_ref = out["x_b"] if out["x_b"] is not None else out["x_hat"]
    mse_fg = d_fg(x, out["x_f"], m)
    mse_bg = d_bg(x, x_ref)
    l_per = perceptual_loss(x, x_ref, extractor)
    l_sty = style_loss(x, x_ref, extractor)
    total, breakdown = total_loss(out["bpp"], mse_fg, mse_bg, l_per, l_sty, cfg.loss_config())
    optimizer.zero_grad()
    total.backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    optimizer.step()
    model.trained_steps += 1
    model.invalidate_tables()
    return breakdown


class _TorchPyramid:
    """Mask pyramid view with per-batch tensor levels."""

    def __init__(self, levels: dict):
        self.levels = levels

    def level_for_scale(self, scale):
        return self.levels[scale]


def _batch_pyramid_source(m: torch.Tensor) -> np.ndarray:
    return m.detach().cpu().numpy()


def quick_eval(model, pairs, max_images=8):
    """Round-quantized (no range coder) bpp / PSNR snapshot on held-out pairs."""
    from .entropy import gaussian_bits
    from .evalkit import psnr

    model.eval()
    recs = []
    with torch.no_grad():
        for img, mask in pairs[:max_images]:
            x = torch.from_numpy(img.transpose(2, 0, 1)[None]).float()
            pyramid = build_mask_pyramid(mask)
            y = model.encode_latent(x, pyramid)
            y_hat = torch.round(y)
            z = model.hyper_a(y)
            z_hat = torch.round(z)
            params = model.fusion(model.hyper_s(z_hat), model.context(y_hat))
            bits = float(gaussian_bits(y_hat, params).sum()) + float(model.z_prior.bits(z_hat).sum())
            x_f, x_b, x_hat = model.reconstruct(y_hat, pyramid, mask)
            xh = x_hat[0].clamp(0, 1).numpy().transpose(1, 2, 0)
            recs.append(
                {
                    "bpp": bits / (img.shape[0] * img.shape[1]),
                    "psnr": psnr(img, xh),
                    "roi_psnr": psnr(img, xh, mask, region="fg"),
                    "bg_psnr": psnr(img, xh, mask, region="bg"),
                }
            )
    model.train()
    return {k: float(np.mean([r[k] for r in recs])) for k in recs[0]}


def run_training(cfg: TrainConfig, dataset, out_dir):
    """Train per config; writes curves.ndjson + checkpoints, returns paths.

    A NaN loss aborts the run and leaves `checkpoint_last_good.npz`
    untouched from the previous epoch.
    """
    os.makedirs(out_dir, exist_ok=True)
    pairs = load_dataset(dataset, crop=cfg.crop)
    n_eval = max(1, int(len(pairs) * cfg.eval_fraction))
    eval_pairs, train_pairs = pairs[:n_eval], pairs[n_eval:]
    if not train_pairs:
        raise DataError("dataset too small for the held-out split")

    torch.manual_seed(cfg.seed)
    np_rng = np.random.default_rng(cfg.seed + 1)
    model = build_model(cfg.profile, mode=cfg.mode, seed=cfg.seed)
    model.train()
    extractor = FrozenFeaturePyramid()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_initial)

    curves_path = os.path.join(out_dir, "curves.ndjson")
    final_path = os.path.join(out_dir, "checkpoint_final.npz")
    last_good = None
    step = 0
    with open(curves_path, "w", encoding="utf-8") as curves:
        config_rec = {"kind": "config", **asdict(cfg), "train_images": len(train_pairs)}
        curves.write(json.dumps(config_rec) + "\n")
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at(epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            order = np_rng.permutation(len(train_pairs))
            for start in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size):
                batch = make_batch(train_pairs, order[start : start + cfg.batch_size], cfg.crop, np_rng)
                if batch is None:
                    continue
                try:
                    breakdown = train_step(batch, model, extractor, optimizer, cfg)
                except LossNaNError as err:
                    logger.error("NaN loss at step %d: %s; aborting run", step, err.breakdown)
                    curves.write(json.dumps({"kind": "abort", "step": step, "parts": err.breakdown.as_record()}) + "\n")
                    return {"aborted": True, "checkpoint": last_good, "curves": curves_path}
                if step % cfg.log_every == 0:
                    rec = {"kind": "train", "step": step, "lambda": cfg.lam, "lr": lr}
                    rec.update(breakdown.as_record())
                    curves.write(json.dumps(rec) + "\n")
                step += 1
            if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
                ev = quick_eval(model, eval_pairs)
                curves.write(json.dumps({"kind": "eval", "step": step, "epoch": epoch, **ev}) + "\n")
                curves.flush()
            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1:
                last_good = os.path.join(out_dir, f"checkpoint_epoch{epoch:04d}.npz")
                _save_full(last_good, model, cfg, optimizer, np_rng, epoch)
    model.update_entropy_tables()
    _save_full(final_path, model, cfg, optimizer, np_rng, cfg.epochs - 1)
    final_eval = quick_eval(model, eval_pairs)
    return {
        "aborted": False,
        "checkpoint": final_path,
        "curves": curves_path,
        "eval": final_eval,
        "steps": step,
    }


def _save_full(path, model, cfg: TrainConfig, optimizer, np_rng, epoch):
    meta = {"lambda": cfg.lam, "train_epoch": epoch, "train_config": asdict(cfg)}
    rng_state = {"torch": torch.get_rng_state(), "numpy": np_rng.bit_generator.state}
    save_checkpoint(path, model, meta=meta, optimizer=optimizer, rng_state=rng_state)


def resume_training(checkpoint_path, cfg: TrainConfig, dataset, out_dir):
    """Continue a run from a full checkpoint (optimizer + RNG restored)."""
    model, meta, aux = load_checkpoint(checkpoint_path)
    start_epoch = int(meta.get("train_epoch", -1)) + 1
    pairs = load_dataset(dataset, crop=cfg.crop)
    n_eval = max(1, int(len(pairs) * cfg.eval_fraction))
    eval_pairs, train_pairs = pairs[:n_eval], pairs[n_eval:]
    model.train()
    extractor = FrozenFeaturePyramid()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_at(start_epoch))
    _load_optimizer(optimizer, aux, model)
    if "rng/torch" in aux:
        torch.set_rng_state(torch.from_numpy(aux["rng/torch"].copy()))
    np_rng = np.random.default_rng(cfg.seed + 1)
    if "rng/numpy" in aux:
        np_rng.bit_generator.state = json.loads(bytes(aux["rng/numpy"].tobytes()).decode())
    os.makedirs(out_dir, exist_ok=True)
    step = 0
    records = []
    for epoch in range(start_epoch, cfg.epochs):
        lr = cfg.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = np_rng.permutation(len(train_pairs))
        for start in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size):
            batch = make_batch(train_pairs, order[start : start + cfg.batch_size], cfg.crop, np_rng)
            if batch is None:
                continue
            breakdown = train_step(batch, model, extractor, optimizer, cfg)
            records.append(breakdown)
            step += 1
    final_path = os.path.join(out_dir, "checkpoint_resumed.npz")
    model.update_entropy_tables()
    _save_full(final_path, model, cfg, optimizer, np_rng, cfg.epochs - 1)
    return {"checkpoint": final_path, "records": records}


def _load_optimizer(optimizer, aux, model):
    if "opt/groups" not in aux:
        return
    groups = json.loads(bytes(aux["opt/groups"].tobytes()).decode())
    state = {}
    for key, arr in aux.items():
        if not key.startswith("opt/state/"):
            continue
        _, _, pid, field_name = key.split("/", 3)
        entry = state.setdefault(int(pid), {})
        entry[field_name] = torch.from_numpy(arr.copy()) if arr.ndim else torch.tensor(arr.item())
    sd = optimizer.state_dict()
    sd["param_groups"] = groups
    sd["state"] = state
    optimizer.load_state_dict(sd)
