"""Mask-conditioned face synthesis with editing-behavior simulated training."""

from .config import TrainConfig, load_config, save_config
from .data import DatasetManifest, Sample, load_celebamaskhq, make_toy_dataset, minibatch
from .masks import (
    CodecError,
    ImageTensor,
    LabelMask,
    OneHotMask,
    decode_image_png,
    decode_mask_png,
    encode_image_png,
    encode_mask_png,
    label_to_onehot,
    onehot_to_label,
    resize_mask,
)
from .palette import DEFAULT_PALETTE, CategoryPalette

__version__ = "0.1.0"

__all__ = [
    "CategoryPalette",
    "CodecError",
    "DEFAULT_PALETTE",
    "DatasetManifest",
    "ImageTensor",
    "LabelMask",
    "OneHotMask",
    "Sample",
    "TrainConfig",
    "decode_image_png",
    "decode_mask_png",
    "encode_image_png",
    "encode_mask_png",
    "label_to_onehot",
    "load_celebamaskhq",
    "load_config",
    "make_toy_dataset",
    "minibatch",
    "onehot_to_label",
    "resize_mask",
    "save_config",
    "__version__",
]
