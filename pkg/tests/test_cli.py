import json
import os

import numpy as np
import pytest

from roicodec.cli import main, parse_config, ConfigError
from roicodec.dataio import save_image, save_mask
from roicodec.model import build_model, save_checkpoint
from roicodec.toydata import make_synthetic_pair, write_synthetic_dataset


@pytest.fixture(scope="module")
def nano_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "nano.npz"
    model = build_model("nano", seed=11)
    save_checkpoint(path, model, meta={"lambda": 128.0})
    return str(path)


@pytest.fixture(scope="module")
def nano_ckpts3(tmp_path_factory):
    import torch

    root = tmp_path_factory.mktemp("ckpts")
    paths = []
    for i, lam in enumerate((64.0, 128.0, 512.0)):
        model = build_model("nano", seed=20 + i)
        # untrained latents round to zero; scale the last analysis stage so
        # the three fake operating points land at distinct rates
        with torch.no_grad():
            model.analysis.stages[3][0].weight.mul_(4.0 * (i + 1))
            model.analysis.stages[3][0].bias.mul_(4.0 * (i + 1))
        p = root / f"m{i}.npz"
        save_checkpoint(p, model, meta={"lambda": lam})
        paths.append(str(p))
    return paths


@pytest.fixture(scope="module")
def sample_pair(tmp_path_factory):
    d = tmp_path_factory.mktemp("pair")
    img, mask = make_synthetic_pair(np.random.default_rng(5), 64)
    ip, mp = d / "img.png", d / "mask.png"
    save_image(img, ip)
    save_mask(mask, mp)
    return str(ip), str(mp)


class TestConfigParsing:
    def test_file_plus_overrides(self, tmp_path):
        cfg = tmp_path / "toy.cfg"
        cfg.write_text("config_version = 1\nprofile = nano\nlambda = 128\n")
        values = parse_config(str(cfg), ["lambda=512", "mode=explicit"])
        assert values["lambda"] == 512.0
        assert values["mode"] == "explicit"

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("config_version = 1\nwarp_speed = 9\n")
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config(str(cfg))

    def test_missing_version_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("profile = toy\n")
        with pytest.raises(ConfigError, match="config_version"):
            parse_config(str(cfg))

    def test_env_seed_override(self, tmp_path, monkeypatch):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("config_version = 1\nseed = 3\n")
        monkeypatch.setenv("ROICODEC_SEED", "99")
        assert parse_config(str(cfg))["seed"] == 99


class TestExitCodes:
    def test_missing_manifest_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "t.cfg"
        cfg.write_text("config_version = 1\ndataset = /nope/manifest.tsv\n")
        code = main(["train", "--config", str(cfg)])
        assert code == 2
        assert "/nope/manifest.tsv" in capsys.readouterr().err

    def test_unknown_override_key_exits_2(self, tmp_path):
        cfg = tmp_path / "t.cfg"
        cfg.write_text("config_version = 1\ndataset = synthetic:count=4,size=64\n")
        assert main(["train", "--config", str(cfg), "--override", "bogus=1"]) == 2

    def test_profile_mismatch_exits_3(self, tmp_path, nano_ckpt, sample_pair):
        ip, mp = sample_pair
        out = tmp_path / "x.roic"
        assert main(["encode", "--image", ip, "--mask", mp, "--model", nano_ckpt, "--out", str(out)]) == 0
        other = tmp_path / "toy.npz"
        save_checkpoint(other, build_model("toy", seed=1))
        code = main(["decode", "--bitstream", str(out), "--model", str(other), "--out-dir", str(tmp_path / "d")])
        assert code == 3

    def test_corrupt_bitstream_exits_1(self, tmp_path, nano_ckpt):
        bad = tmp_path / "bad.roic"
        bad.write_bytes(b"ROIC" + bytes([1]) + b"\x00" * 5)  # truncated chunk table
        code = main(["decode", "--bitstream", str(bad), "--model", nano_ckpt, "--out-dir", str(tmp_path / "d")])
        assert code == 1

    def test_unsupported_version_exits_3(self, tmp_path, nano_ckpt):
        bad = tmp_path / "v9.roic"
        bad.write_bytes(b"ROIC" + bytes([9]) + b"\x00" * 17)
        code = main(["decode", "--bitstream", str(bad), "--model", nano_ckpt, "--out-dir", str(tmp_path / "d")])
        assert code == 3


class TestEncodeDecode:
    def test_sidecar_bpp_accounting(self, tmp_path, nano_ckpt, sample_pair, capsys):
        ip, mp = sample_pair
        out = tmp_path / "x.roic"
        assert main(["encode", "--image", ip, "--mask", mp, "--model", nano_ckpt, "--out", str(out)]) == 0
        stats = json.load(open(str(out) + ".json"))
        assert stats["bpp_file"] == pytest.approx(8.0 * stats["file_bytes"] / stats["pixels"])
        dec_dir = tmp_path / "dec"
        assert main(["decode", "--bitstream", str(out), "--model", nano_ckpt, "--out-dir", str(dec_dir)]) == 0
        sidecar = json.load(open(dec_dir / "metrics.json"))
        assert sidecar["bpp"] == pytest.approx(8.0 * os.path.getsize(out) / stats["pixels"])
        for name in ("x_hat.png", "x_f.png", "x_b.png"):
            assert (dec_dir / name).exists()

    def test_mask_bits_flag_arithmetic(self, tmp_path, nano_ckpt, sample_pair):
        ip, mp = sample_pair
        a, b = tmp_path / "a.roic", tmp_path / "b.roic"
        main(["encode", "--image", ip, "--mask", mp, "--model", nano_ckpt, "--out", str(a)])
        main(["encode", "--image", ip, "--mask", mp, "--model", nano_ckpt, "--out", str(b), "--count-mask-bits", "false"])
        sa = json.load(open(str(a) + ".json"))
        sb = json.load(open(str(b) + ".json"))
        drop = 8.0 * sa["mask_chunk_bytes"] / sa["pixels"]
        assert sa["bpp"] - sb["bpp"] == pytest.approx(drop, abs=1e-12)

    def test_encode_idempotent(self, tmp_path, nano_ckpt, sample_pair):
        ip, mp = sample_pair
        a, b = tmp_path / "a.roic", tmp_path / "b.roic"
        main(["encode", "--image", ip, "--mask", mp, "--model", nano_ckpt, "--out", str(a)])
        main(["encode", "--image", ip, "--mask", mp, "--model", nano_ckpt, "--out", str(b)])
        assert open(a, "rb").read() == open(b, "rb").read()


class TestTrainCli:
    @pytest.mark.slow
    def test_train_with_overrides(self, tmp_path, capsys):
        cfg = tmp_path / "t.cfg"
        cfg.write_text(
            "config_version = 1\n"
            "profile = nano\n"
            "dataset = synthetic:count=10,size=64,seed=8\n"
            "epochs = 1\nbatch_size = 4\ncrop = 64\nlambda = 128\n"
            f"out_dir = {tmp_path / 'run'}\n"
        )
        code = main(["train", "--config", str(cfg), "--override", "mode=explicit", "--override", "lambda=512"])
        assert code == 0
        manifest = json.load(open(tmp_path / "run" / "run_manifest.json"))
        assert manifest["config"]["mode"] == "explicit"
        assert manifest["config"]["lambda"] == 512.0
        assert (tmp_path / "run" / "checkpoint_final.npz").exists()
        records = [json.loads(l) for l in open(tmp_path / "run" / "curves.ndjson")]
        assert records[0]["kind"] == "config"
        assert records[0]["mode"] == "explicit"


class TestDiagnoseAndEval:
    def test_diagnose_untrained_flagged(self, tmp_path, nano_ckpt, capsys):
        code = main([
            "diagnose", "--model", nano_ckpt,
            "--dataset", "synthetic:count=3,size=64,seed=3",
            "--out-dir", str(tmp_path / "diag"), "--max-images", "2",
        ])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["untrained"] is True
        assert -1.0 <= out["pcc"] <= 1.0
        summary = open(tmp_path / "diag" / "summary.txt").read()
        assert "untrained" in summary

    def test_eval_with_anchor_series(self, tmp_path, nano_ckpts3, capsys):
        anchor = tmp_path / "anchor.csv"
        anchor.write_text(
            "label, bpp, psnr, roi_psnr, bg_psnr\n"
            "published, 0.10, 28.0, 29.0, 27.5\n"
            "published, 0.30, 31.0, 32.0, 30.5\n"
            "published, 0.90, 34.0, 35.0, 33.5\n"
        )
        code = main([
            "eval", "--dataset", "synthetic:count=4,size=64,seed=6",
            "--models", "learned:" + ",".join(nano_ckpts3),
            "--anchor", str(anchor), "--out-dir", str(tmp_path / "rep"), "--max-images", "2",
        ])
        assert code == 0
        csv = open(tmp_path / "rep" / "rd_points.csv").read()
        assert "learned" in csv and "published" in csv
        assert (tmp_path / "rep" / "rd_psnr.png").exists()
