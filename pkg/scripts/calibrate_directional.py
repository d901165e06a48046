"""Desk calibration of the implicit-vs-explicit toy experiment.

Trains the six toy runs the acceptance suite uses and prints the
resulting RD points, PCC values and the matched-bpp comparison so the
experiment scale (steps, dataset, lambdas) can be sanity-checked before
freezing it in tests.
"""

import json
import os
import sys
import time

import numpy as np
import torch

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from roicodec.codec import decode_image, encode_image
from roicodec.evalkit import pcc_normality, psnr
from roicodec.model import load_checkpoint
from roicodec.training import TrainConfig, load_dataset, run_training

DATASET = "synthetic:count=48,size=64,seed=101"
LAMBDAS = (64.0, 128.0, 512.0)
OUT = sys.argv[1] if len(sys.argv) > 1 else "/tmp/directional"
EPOCHS = int(os.environ.get("CAL_EPOCHS", "30"))


def train_all():
    results = {}
    for mode in ("implicit", "explicit"):
        for lam in LAMBDAS:
            tag = f"{mode}_lam{int(lam)}"
            out_dir = os.path.join(OUT, tag)
            t0 = time.time()
            cfg = TrainConfig(
                profile="toy", crop=64, batch_size=8, epochs=EPOCHS, lam=lam, mode=mode,
                seed=7, log_every=5, checkpoint_every=1000, eval_every=5,
            )
            res = run_training(cfg, DATASET, out_dir)
            results[tag] = res["checkpoint"]
            print(f"{tag}: {res['steps']} steps in {time.time()-t0:.0f}s eval={res['eval']}", flush=True)
    return results


def coded_points(ckpts, pairs):
    points = {}
    for tag, path in ckpts.items():
        model, _, _ = load_checkpoint(path)
        model.eval()
        recs = []
        for img, mask in pairs:
            stream, stats = encode_image(img, mask, model)
            out = decode_image(stream, model)
            recs.append((stats["bpp"], psnr(img, out["x_hat"], mask, "fg"), psnr(img, out["x_hat"])))
        points[tag] = tuple(float(np.mean([r[i] for r in recs])) for i in range(3))
        print(f"{tag}: bpp={points[tag][0]:.4f} roi_psnr={points[tag][1]:.2f} psnr={points[tag][2]:.2f}", flush=True)
    return points


def latent_pcc(ckpts, pairs):
    from roicodec.cli import collect_latents

    out = {}
    for mode in ("implicit", "explicit"):
        path = ckpts[f"{mode}_lam128"]
        model, _, _ = load_checkpoint(path)
        model.eval()
        samples = collect_latents(model, pairs, max_images=6)
        out[mode] = pcc_normality(samples)
    return out


if __name__ == "__main__":
    os.makedirs(OUT, exist_ok=True)
    torch.set_num_threads(max(1, os.cpu_count() or 1))
    ckpts = train_all()
    pairs = load_dataset(DATASET)[:6]  # the held-out slice (eval_fraction=0.125)
    pts = coded_points(ckpts, pairs)
    pcc = latent_pcc(ckpts, pairs)
    print("PCC:", json.dumps(pcc), flush=True)
    with open(os.path.join(OUT, "summary.json"), "w") as fh:
        json.dump({"points": pts, "pcc": pcc, "ckpts": ckpts}, fh, indent=2)
    print("done")
