"""ROI-based learned image codec with implicit bit allocation."""

__version__ = "0.1.0"


def __getattr__(name):
    # lazy re-exports so `import roicodec` stays light (no torch import)
    if name in ("encode_image", "decode_image", "Bitstream"):
        from . import codec

        return getattr(codec, name)
    if name in ("RoiCodec", "build_model", "load_checkpoint", "save_checkpoint"):
        from . import model

        return getattr(model, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
