"""Label masks, one-hot tensors, normalized images, and their codecs.

All types are immutable value holders over numpy arrays; the codecs are
pure functions. Wire formats: masks are single-channel 8-bit PNGs whose
pixel values are category indices (saved indexed so ordinary viewers show
palette colors), images are plain 8-bit RGB PNGs mapped to/from [-1, 1].
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .palette import CategoryPalette


class CodecError(ValueError):
    """Raised when bytes or arrays violate a mask/image format contract."""


@dataclass(frozen=True)
class LabelMask:
    """H x W array of category indices."""

    labels: np.ndarray

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValueError(f"labels must be 2-D, got shape {self.labels.shape}")
        if self.labels.dtype != np.uint8:
            object.__setattr__(self, "labels", self.labels.astype(np.uint8))
        self.labels.setflags(write=False)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def validate(self, palette: CategoryPalette) -> "LabelMask":
        check_labels(self.labels, palette.count)
        return self


@dataclass(frozen=True)
class OneHotMask:
    """H x W x C binary expansion of a label mask."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"one-hot values must be 3-D, got shape {self.values.shape}")
        self.values.setflags(write=False)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class ImageTensor:
    """H x W x 3 image with float values in [-1, 1]."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ValueError(f"image must be H x W x 3, got shape {self.values.shape}")
        if self.values.dtype != np.float32:
            object.__setattr__(self, "values", self.values.astype(np.float32))
        self.values.setflags(write=False)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def check_labels(labels: np.ndarray, count: int) -> None:
    bad = labels >= count
    if bad.any():
        ys, xs = np.nonzero(bad)
        raise CodecError(
            f"{bad.sum()} label(s) out of range [0, {count - 1}]; "
            f"first offender at ({ys[0]}, {xs[0]}) with value {int(labels[ys[0], xs[0]])}"
        )


def label_to_onehot(mask: LabelMask, palette: CategoryPalette) -> OneHotMask:
    """Expand category indices into C binary channels."""
    check_labels(mask.labels, palette.count)
    eye = np.eye(palette.count, dtype=np.float32)
    return OneHotMask(eye[mask.labels])


def onehot_to_label(onehot: OneHotMask, palette: CategoryPalette | None = None) -> LabelMask:
    """Per-pixel argmax over channels; ties break toward the lowest index.

    Accepts soft inputs (e.g. softmax probabilities), not just strict one-hot.
    """
    if palette is not None and onehot.channels != palette.count:
        raise CodecError(
            f"channel count {onehot.channels} does not match palette count {palette.count}"
        )
    return LabelMask(np.argmax(onehot.values, axis=2).astype(np.uint8))


def nearest_indices(n_out: int, n_in: int) -> np.ndarray:
    """Center-aligned nearest-neighbor source indices for a 1-D resize."""
    return np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64), n_in - 1)


def resize_mask(mask: LabelMask, new_h: int, new_w: int) -> LabelMask:
    """Nearest-neighbor resample; never invents category indices."""
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target size must be positive, got {new_h} x {new_w}")
    if (new_h, new_w) == (mask.height, mask.width):
        return mask
    rows = nearest_indices(new_h, mask.height)
    cols = nearest_indices(new_w, mask.width)
    return LabelMask(mask.labels[np.ix_(rows, cols)])


def encode_mask_png(mask: LabelMask, palette: CategoryPalette) -> bytes:
    """Single-channel indexed PNG; pixel value = category index."""
    check_labels(mask.labels, palette.count)
    img = Image.fromarray(mask.labels, mode="P")
    img.putpalette(palette.pil_palette())
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def decode_mask_png(
    data: bytes, palette: CategoryPalette, check_embedded_palette: bool = False
) -> LabelMask:
    """Invert encode_mask_png; accepts indexed or plain grayscale PNGs.

    With check_embedded_palette, an indexed PNG whose stored colors disagree
    with ``palette`` is rejected (guards against masks painted for a
    different category set).
    """
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise CodecError(f"not a decodable PNG: {exc}") from exc
    if img.mode not in ("P", "L"):
        raise CodecError(f"mask PNG must be single-channel (P or L mode), got {img.mode}")
    if check_embedded_palette and img.mode == "P":
        stored = img.getpalette()
        if stored is not None:
            stored = np.array(stored, dtype=np.int64)
            used = int(np.array(img).max()) + 1
            want = palette.color_array()[: min(used, palette.count)].astype(np.int64)
            got = stored[: want.size].reshape(-1, 3)
            if got.shape != want.shape or (got != want).any():
                raise CodecError(
                    f"embedded palette does not match the working palette "
                    f"({palette.count} categories)"
                )
    labels = np.array(img, dtype=np.uint8)
    check_labels(labels, palette.count)
    return LabelMask(labels)


def encode_image_png(image: ImageTensor) -> bytes:
    """Clamp to [-1, 1] and quantize to 8-bit RGB PNG."""
    vals = np.clip(image.values, -1.0, 1.0)
    u8 = np.round((vals + 1.0) * 127.5).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_image_png(data: bytes) -> ImageTensor:
    try:
        img = Image.open(io.BytesIO(data)).convert("RGB")
    except Exception as exc:
        raise CodecError(f"not a decodable image: {exc}") from exc
    u8 = np.array(img, dtype=np.float32)
    return ImageTensor(u8 / 127.5 - 1.0)


def image_from_uint8(u8: np.ndarray) -> ImageTensor:
    return ImageTensor(u8.astype(np.float32) / 127.5 - 1.0)


def image_to_uint8(image: ImageTensor) -> np.ndarray:
    return np.round((np.clip(image.values, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)
