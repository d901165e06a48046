"""Command-line interface: train / encode / decode / eval / diagnose /
compare-alloc, wired through a key=value config file plus --override.

Exit codes: 0 success, 1 runtime error, 2 config error, 3 artifact
mismatch. ROICODEC_SEED overrides the configured RNG seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import torch

from . import __version__
from .codec import ArtifactMismatchError, decode_image, encode_image, get_coder_backend
from .dataio import DataError, load_pair, save_image
from .evalkit import (
    RdCurve,
    RdPoint,
    bit_allocation_map,
    bd_rate,
    emit_report,
    pcc_normality,
    psnr,
    read_rd_points,
)
from .model import load_checkpoint
from .training import TrainConfig, load_dataset, run_training

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


CONFIG_KEYS = {
    "config_version": int,
    "profile": str,
    "mode": str,
    "lambda": float,
    "epochs": int,
    "batch_size": int,
    "lr_initial": float,
    "lr_final": float,
    "lr_drop_at": float,
    "crop": int,
    "seed": int,
    "grad_clip": float,
    "log_every": int,
    "checkpoint_every": int,
    "eval_every": int,
    "eval_fraction": float,
    "distortion_scale": float,
    "dataset": str,
    "out_dir": str,
    "coder_backend": str,
}


def parse_config(path=None, overrides=()):
    values = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, val = (part.strip() for part in line.split("=", 1))
                values[key] = val
        if "config_version" not in values:
            raise ConfigError(f"{path}: missing config_version")
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, val = (part.strip() for part in item.split("=", 1))
        values[key] = val
    typed = {}
    for key, val in values.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            typed[key] = CONFIG_KEYS[key](val)
        except ValueError as err:
            raise ConfigError(f"config key {key}: {err}") from err
    if typed.get("config_version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version {typed['config_version']}")
    if "ROICODEC_SEED" in os.environ:
        typed["seed"] = int(os.environ["ROICODEC_SEED"])
    return typed


def train_config_from(values) -> TrainConfig:
    kw = {}
    mapping = {
        "lambda": "lam",
        "profile": "profile",
        "mode": "mode",
        "epochs": "epochs",
        "batch_size": "batch_size",
        "lr_initial": "lr_initial",
        "lr_final": "lr_final",
        "lr_drop_at": "lr_drop_at",
        "crop": "crop",
        "seed": "seed",
        "grad_clip": "grad_clip",
        "log_every": "log_every",
        "checkpoint_every": "checkpoint_every",
        "eval_every": "eval_every",
        "eval_fraction": "eval_fraction",
        "distortion_scale": "distortion_scale",
    }
    for src, dst in mapping.items():
        if src in values:
            kw[dst] = values[src]
    try:
        return TrainConfig(**kw)
    except ValueError as err:
        raise ConfigError(str(err)) from err


def _write_manifest(out_dir, args, values):
    os.makedirs(out_dir, exist_ok=True)
    rec = {
        "argv": sys.argv[1:],
        "config": values,
        "package_version": __version__,
        "command": args.command,
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(rec, fh, indent=2, sort_keys=True)


def cmd_train(args):
    values = parse_config(args.config, args.override)
    if "dataset" not in values:
        raise ConfigError("config must set dataset (manifest path or synthetic:... spec)")
    dataset = values["dataset"]
    if not dataset.startswith("synthetic:") and not os.path.exists(dataset):
        raise ConfigError(f"dataset manifest not found: {dataset}")
    cfg = train_config_from(values)
    out_dir = values.get("out_dir", args.out_dir or "run")
    _write_manifest(out_dir, args, values)
    result = run_training(cfg, dataset, out_dir)
    print(json.dumps({k: v for k, v in result.items() if not isinstance(v, dict)}, indent=2))
    return 0 if not result.get("aborted") else 1


def _load_model(path):
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    model, meta, _ = load_checkpoint(path)
    model.eval()
    return model, meta


def cmd_encode(args):
    model, _ = _load_model(args.model)
    img, mask = load_pair(args.image, args.mask)
    backend = get_coder_backend(args.backend)
    stream, stats = encode_image(img, mask, model, count_mask_bits=args.count_mask_bits, backend=backend)
    data = stream.tobytes()
    with open(args.out, "wb") as fh:
        fh.write(data)
    stats["file_bytes"] = len(data)
    stats["bpp_file"] = 8.0 * len(data) / stats["pixels"]
    with open(args.out + ".json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
    print(json.dumps({"out": args.out, "bpp": stats["bpp"], "bytes": len(data)}))
    return 0


def cmd_decode(args):
    model, _ = _load_model(args.model)
    with open(args.bitstream, "rb") as fh:
        data = fh.read()
    backend = get_coder_backend(args.backend)
    out = decode_image(data, model, backend=backend)
    os.makedirs(args.out_dir, exist_ok=True)
    save_image(out["x_hat"], os.path.join(args.out_dir, "x_hat.png"))
    save_image(out["x_f"], os.path.join(args.out_dir, "x_f.png"))
    if out["x_b"] is not None:
        save_image(out["x_b"], os.path.join(args.out_dir, "x_b.png"))
    pixels = out["x_hat"].shape[0] * out["x_hat"].shape[1]
    sidecar = {
        "bitstream_bytes": len(data),
        "bpp": 8.0 * len(data) / pixels,
        "width": out["x_hat"].shape[1],
        "height": out["x_hat"].shape[0],
    }
    with open(os.path.join(args.out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    print(json.dumps(sidecar))
    return 0


def evaluate_curve(ckpt_paths, pairs, label, backend, max_images=8):
    """Encode/decode `pairs` with each checkpoint; one RdPoint per ckpt."""
    points = []
    for path in ckpt_paths:
        model, meta = _load_model(path)
        recs = []
        for img, mask in pairs[:max_images]:
            stream, stats = encode_image(img, mask, model, backend=backend)
            out = decode_image(stream, model, backend=backend)
            recs.append(
                {
                    "bpp": stats["bpp"],
                    "psnr": psnr(img, out["x_hat"]),
                    "roi_psnr": psnr(img, out["x_hat"], mask, region="fg"),
                    "bg_psnr": psnr(img, out["x_hat"], mask, region="bg"),
                }
            )
        points.append(
            RdPoint(
                bpp=float(np.mean([r["bpp"] for r in recs])),
                psnr=float(np.mean([r["psnr"] for r in recs])),
                roi_psnr=float(np.mean([r["roi_psnr"] for r in recs])),
                bg_psnr=float(np.mean([r["bg_psnr"] for r in recs])),
                label=label,
            )
        )
    return RdCurve(points, codec_id=label)


def collect_latents(model, pairs, max_images=8):
    """Flattened round-quantized latents across images (for PCC)."""
    from .dataio import build_mask_pyramid, pad_to_multiple

    chunks = []
    with torch.no_grad():
        for img, mask in pairs[:max_images]:
            x_pad, _ = pad_to_multiple(np.asarray(img), 64)
            m_pad, _ = pad_to_multiple(np.asarray(mask), 64)
            pyramid = build_mask_pyramid(m_pad)
            xt = torch.from_numpy(x_pad.transpose(2, 0, 1)[None]).float()
            y = model.encode_latent(xt, pyramid, m_pad)
            chunks.append(torch.round(y).reshape(-1).numpy())
    return np.concatenate(chunks)


def _dataset_pairs(spec):
    return [(img, mask) for img, mask in load_dataset(spec)]


def cmd_eval(args):
    backend = get_coder_backend(args.backend)
    pairs = _dataset_pairs(args.dataset)
    _write_manifest(args.out_dir, args, {"dataset": args.dataset})
    curves = []
    for spec in args.models:
        label, _, paths = spec.partition(":")
        if not paths:
            label, paths = f"model{len(curves)}", label
        curves.append(evaluate_curve(paths.split(","), pairs, label, backend, args.max_images))
    if args.anchor:
        curves.extend(read_rd_points(args.anchor).values())
    files = emit_report(curves, {}, args.out_dir)
    print(json.dumps({"report_files": files}, indent=2))
    return 0


def cmd_diagnose(args):
    model, meta = _load_model(args.model)
    pairs = _dataset_pairs(args.dataset)
    _write_manifest(args.out_dir, args, {"dataset": args.dataset})
    samples = collect_latents(model, pairs, args.max_images)
    pcc = pcc_normality(samples)
    heat = _first_image_bitmap(model, pairs)
    notes = {"model": args.model, "pcc": f"{pcc:.6f}"}
    if model.trained_steps == 0:
        notes["training"] = "untrained (random weights; PCC reported for reference only)"
    files = emit_report(
        [],
        {"latents": {"model": samples}, "heatmaps": {"model": heat}, "notes": notes},
        args.out_dir,
    )
    from .entropy import save_bit_map

    bits_path = os.path.join(args.out_dir, "bits_model.bin")
    save_bit_map(bits_path, heat)
    files.append(bits_path)
    print(json.dumps({"pcc": pcc, "untrained": model.trained_steps == 0, "report_files": files}, indent=2))
    return 0


def _first_image_bitmap(model, pairs):
    from .dataio import build_mask_pyramid, pad_to_multiple

    img, mask = pairs[0]
    x_pad, _ = pad_to_multiple(np.asarray(img), 64)
    m_pad, _ = pad_to_multiple(np.asarray(mask), 64)
    pyramid = build_mask_pyramid(m_pad)
    with torch.no_grad():
        xt = torch.from_numpy(x_pad.transpose(2, 0, 1)[None]).float()
        y = model.encode_latent(xt, pyramid, m_pad)
        y_hat = torch.round(y)
        z_hat = torch.round(model.hyper_a(y))
        params = model.fusion(model.hyper_s(z_hat), model.context(y_hat))
    return bit_allocation_map(y_hat, params)


def cmd_compare_alloc(args):
    backend = get_coder_backend(args.backend)
    pairs = _dataset_pairs(args.dataset)
    _write_manifest(args.out_dir, args, {"dataset": args.dataset})
    imp_paths = args.implicit.split(",")
    exp_paths = args.explicit.split(",")
    imp_curve = evaluate_curve(imp_paths, pairs, "implicit", backend, args.max_images)
    exp_curve = evaluate_curve(exp_paths, pairs, "explicit", backend, args.max_images)
    imp_model, _ = _load_model(imp_paths[-1])
    exp_model, _ = _load_model(exp_paths[-1])
    latents = {
        "implicit": collect_latents(imp_model, pairs, args.max_images),
        "explicit": collect_latents(exp_model, pairs, args.max_images),
    }
    pccs = {k: pcc_normality(v) for k, v in latents.items()}
    notes = {"pcc_implicit": f"{pccs['implicit']:.6f}", "pcc_explicit": f"{pccs['explicit']:.6f}"}
    try:
        notes["bd_rate_roi_implicit_vs_explicit"] = f"{bd_rate(exp_curve, imp_curve, 'roi_psnr'):.4f}%"
    except ValueError as err:
        notes["bd_rate_roi_implicit_vs_explicit"] = f"unavailable: {err}"
    heat = {
        "implicit": _first_image_bitmap(imp_model, pairs),
        "explicit": _first_image_bitmap(exp_model, pairs),
    }
    files = emit_report([imp_curve, exp_curve], {"latents": latents, "heatmaps": heat, "notes": notes}, args.out_dir)
    print(json.dumps({"pcc": pccs, "notes": notes, "report_files": files}, indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="roicodec", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a codec per config")
    p.add_argument("--config", required=False)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode an image/mask pair")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count-mask-bits", type=_parse_bool, default=True)
    p.add_argument("--backend", default="reference", choices=["reference", "fast"])
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a .roic bitstream")
    p.add_argument("--bitstream", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--backend", default="reference", choices=["reference", "fast"])
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="RD evaluation over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--models", action="append", required=True, metavar="LABEL:CKPT,CKPT,...")
    p.add_argument("--anchor", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-images", type=int, default=8)
    p.add_argument("--backend", default="reference", choices=["reference", "fast"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="latent normality + bit maps")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-images", type=int, default=8)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("compare-alloc", help="implicit vs explicit comparison")
    p.add_argument("--implicit", required=True, metavar="CKPT,CKPT,...")
    p.add_argument("--explicit", required=True, metavar="CKPT,CKPT,...")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-images", type=int, default=8)
    p.add_argument("--backend", default="reference", choices=["reference", "fast"])
    p.set_defaults(func=cmd_compare_alloc)
    return parser


def _parse_bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected boolean, got {text!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except ArtifactMismatchError as err:
        print(f"artifact mismatch: {err}", file=sys.stderr)
        return 3
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
