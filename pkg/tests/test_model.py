import numpy as np
import pytest
import torch

from roicodec.dataio import build_mask_pyramid
from roicodec.model import RoiCodec, build_model, load_checkpoint, save_checkpoint
from roicodec.transforms import TransformConfig


class TestCheckpoint:
    def test_roundtrip_preserves_parameters_and_tables(self, tmp_path, nano_model):
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, nano_model, meta={"lambda": 64.0})
        loaded, meta, aux = load_checkpoint(path)
        assert meta["profile"] == "nano"
        assert meta["lambda"] == 64.0
        assert meta["format_version"] == 1
        for (na, pa), (nb, pb) in zip(nano_model.state_dict().items(), loaded.state_dict().items()):
            assert na == nb
            torch.testing.assert_close(pa, pb, rtol=0, atol=0)
        np.testing.assert_array_equal(nano_model.z_tables(), loaded.z_tables())

    def test_loaded_model_encodes_identically(self, tmp_path, nano_model, pair64):
        from roicodec.codec import encode_image

        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, nano_model)
        loaded, _, _ = load_checkpoint(path)
        loaded.eval()
        img, mask = pair64
        s1, _ = encode_image(img, mask, nano_model)
        s2, _ = encode_image(img, mask, loaded)
        assert s1.tobytes() == s2.tobytes()

    def test_missing_meta_rejected(self, tmp_path):
        np.savez(tmp_path / "bad.npz", stuff=np.zeros(3))
        with pytest.raises(ValueError, match="meta"):
            load_checkpoint(tmp_path / "bad.npz")

    def test_mode_roundtrip(self, tmp_path):
        model = build_model("nano", mode="explicit", seed=2)
        path = tmp_path / "e.npz"
        save_checkpoint(path, model)
        loaded, meta, _ = load_checkpoint(path)
        assert meta["mode"] == "explicit"
        assert loaded.synthesis_bg is None


class TestModelSurface:
    def test_profiles(self):
        cfg = TransformConfig.from_profile("full")
        assert (cfg.N, cfg.M, cfg.profile_id) == (192, 320, 0)
        cfg = TransformConfig.from_profile("toy")
        assert (cfg.N, cfg.M, cfg.profile_id) == (64, 96, 1)
        with pytest.raises(ValueError):
            TransformConfig.from_profile("mega")

    def test_forward_bundle_shapes(self, nano_model, pair64):
        img, mask = pair64
        pyr = build_mask_pyramid(mask)
        xt = torch.from_numpy(img.transpose(2, 0, 1)[None]).float()
        mt = torch.from_numpy(mask[None]).float()
        out = nano_model(xt, pyr, mt)
        M = nano_model.cfg.M
        assert out["y_hat"].shape == (1, M, 4, 4)
        assert out["x_hat"].shape == xt.shape
        assert out["x_f"].shape == xt.shape
        assert float(out["bpp"].detach()) > 0

    def test_coding_weights_masked(self, nano_model):
        w = nano_model.coding_weights()
        assert np.all(w.ctx_w[:, :, 2, 2:] == 0.0)
        assert np.all(w.ctx_w[:, :, 3:, :] == 0.0)
        assert w.f1_w.shape[1] == 4 * nano_model.cfg.M
