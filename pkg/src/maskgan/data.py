"""Dataset ingestion and the procedural toy face dataset.

On-disk layout (both real and toy):

    root/images/{id}.png      8-bit RGB
    root/masks/{id}.png       single-channel indexed mask
                              (or root/masks/{id}/{category}.png part files)
    root/palette.json         category manifest; order = part fusion priority
    root/split.json           {"train": [...], "test": [...]}
    root/colors.json          toy only: per-sample category -> RGB table

The toy generator draws face-like layouts (skin ellipse, hair cap, two
eyes, nose, mouth, optional eyeglass band) and renders each mask with
per-sample category colors plus a smooth shading gradient, so both the
mask manifold and the mask -> image style mapping are learnable in
minutes. Everything is a pure function of (n, resolution, seed).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import numpy as np
from PIL import Image

from .masks import (
    ImageTensor,
    LabelMask,
    check_labels,
    decode_image_png,
    decode_mask_png,
    encode_image_png,
    encode_mask_png,
    image_from_uint8,
    resize_mask,
)
from .palette import DEFAULT_PALETTE, CategoryPalette

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sample:
    id: str
    image: ImageTensor
    mask: LabelMask


@dataclass
class DatasetManifest:
    root: Path
    train_ids: List[str]
    test_ids: List[str]
    palette: CategoryPalette
    resolution: int
    skipped: List[str] = field(default_factory=list)
    _color_tables: Optional[dict] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise ValueError(f"train/test splits overlap: {sorted(overlap)[:5]}")

    @property
    def all_ids(self) -> List[str]:
        return self.train_ids + self.test_ids

    def ids(self, split: str) -> List[str]:
        if split == "train":
            return self.train_ids
        if split == "test":
            return self.test_ids
        raise ValueError(f"unknown split {split!r}")

    def load_sample(self, sample_id: str) -> Sample:
        if sample_id in self._cache:
            return self._cache[sample_id]
        image = decode_image_png((self.root / "images" / f"{sample_id}.png").read_bytes())
        mask = load_mask_for_id(self.root / "masks", sample_id, self.palette)
        if (mask.height, mask.width) != (image.height, image.width):
            log.warning(
                "sample %s: mask %dx%d resized to image %dx%d",
                sample_id, mask.height, mask.width, image.height, image.width,
            )
            mask = resize_mask(mask, image.height, image.width)
        if (image.height, image.width) != (self.resolution, self.resolution):
            image = resize_image(image, self.resolution, self.resolution)
            mask = resize_mask(mask, self.resolution, self.resolution)
        sample = Sample(sample_id, image, mask)
        self._cache[sample_id] = sample
        return sample

    def color_table(self, sample_id: str) -> Optional[np.ndarray]:
        """(C, 3) uint8 render colors for a toy sample, if known."""
        if self._color_tables is None:
            path = self.root / "colors.json"
            self._color_tables = json.loads(path.read_text()) if path.exists() else {}
        table = self._color_tables.get(sample_id)
        return None if table is None else np.array(table, dtype=np.uint8)


def resize_image(image: ImageTensor, new_h: int, new_w: int) -> ImageTensor:
    """Area-average resample, renormalized to [-1, 1]."""
    u8 = np.round((np.clip(image.values, -1, 1) + 1.0) * 127.5).astype(np.uint8)
    resized = Image.fromarray(u8, mode="RGB").resize((new_w, new_h), Image.BOX)
    return image_from_uint8(np.array(resized))


def load_mask_for_id(masks_root: Path, sample_id: str, palette: CategoryPalette) -> LabelMask:
    """Load a fused mask PNG, or fuse per-category part files.

    Part files live in ``masks_root/{id}/{category}.png`` as binary masks;
    palette order is the fusion priority (later categories overwrite).
    """
    fused = masks_root / f"{sample_id}.png"
    if fused.exists():
        return decode_mask_png(fused.read_bytes(), palette)
    part_dir = masks_root / sample_id
    if not part_dir.is_dir():
        raise FileNotFoundError(f"no mask for id {sample_id!r} under {masks_root}")
    labels = None
    for cat in palette.categories:
        part = part_dir / f"{cat.name}.png"
        if not part.exists():
            continue
        arr = np.array(Image.open(part).convert("L"))
        if labels is None:
            labels = np.zeros(arr.shape, dtype=np.uint8)
        elif labels.shape != arr.shape:
            raise ValueError(f"part {part} shape {arr.shape} != {labels.shape}")
        labels[arr > 127] = cat.index
    if labels is None:
        raise FileNotFoundError(f"no part files for id {sample_id!r} in {part_dir}")
    return LabelMask(labels)


def load_celebamaskhq(root, resolution: int, palette: CategoryPalette | None = None) -> DatasetManifest:
    """Index an images/ + masks/ directory pair into a manifest.

    Pairs missing either side are skipped (and reported); masks are
    nearest-resized and images area-resized to ``resolution`` lazily at
    sample load. Uses root/palette.json and root/split.json when present,
    otherwise the default palette and a 90/10 split by id order.
    """
    root = Path(root)
    images_dir, masks_dir = root / "images", root / "masks"
    if not images_dir.is_dir() or not masks_dir.is_dir():
        raise FileNotFoundError(f"{root} must contain images/ and masks/ directories")
    if palette is None:
        pal_path = root / "palette.json"
        palette = CategoryPalette.load(pal_path) if pal_path.exists() else DEFAULT_PALETTE

    ids, skipped = [], []
    for img_path in sorted(images_dir.glob("*.png")):
        sid = img_path.stem
        if (masks_dir / f"{sid}.png").exists() or (masks_dir / sid).is_dir():
            ids.append(sid)
        else:
            skipped.append(sid)
    if skipped:
        log.warning("skipping %d id(s) without masks: %s", len(skipped), skipped[:10])
    if not ids:
        raise ValueError(f"no usable image/mask pairs under {root}")

    split_path = root / "split.json"
    if split_path.exists():
        split = json.loads(split_path.read_text())
        known = set(ids)
        train_ids = [i for i in split["train"] if i in known]
        test_ids = [i for i in split["test"] if i in known]
    else:
        cut = max(1, int(len(ids) * 0.9)) if len(ids) > 1 else 1
        train_ids, test_ids = ids[:cut], ids[cut:]
    return DatasetManifest(root, train_ids, test_ids, palette, resolution, skipped=skipped)


# ---------------------------------------------------------------------------
# Procedural toy dataset
# ---------------------------------------------------------------------------

TOY_BRIGHTNESS_RANGE = (0.85, 1.15)
TOY_TINT = 12
TOY_COLOR_JITTER = 8
TOY_SHADE_VERTICAL = 0.12
TOY_SHADE_HORIZONTAL = 0.06


def _ellipse(h, w, cy, cx, ry, rx):
    ys, xs = np.mgrid[0:h, 0:w]
    return ((ys - cy) / max(ry, 1e-6)) ** 2 + ((xs - cx) / max(rx, 1e-6)) ** 2 <= 1.0


def toy_mask_geometry(rng: np.random.Generator, res: int, palette: CategoryPalette) -> np.ndarray:
    """Draw one face-like label map. Later draws overwrite earlier ones."""
    idx = {name: palette.index_of(name) for name in
           ("background", "skin", "nose", "left_eye", "right_eye", "mouth", "hair", "eyeglass")}
    labels = np.full((res, res), idx["background"], dtype=np.uint8)

    cy = (0.55 + rng.uniform(-0.04, 0.04)) * res
    cx = (0.50 + rng.uniform(-0.04, 0.04)) * res
    ax = rng.uniform(0.26, 0.34) * res  # skin semi-axis, x
    ay = rng.uniform(0.33, 0.42) * res  # skin semi-axis, y

    # hair cap: a larger ellipse shifted up, later clipped by the skin fill
    hair_cy = cy - rng.uniform(0.10, 0.16) * res
    labels[_ellipse(res, res, hair_cy, cx, ay * rng.uniform(0.85, 1.0), ax * rng.uniform(1.05, 1.2))] = idx["hair"]
    labels[_ellipse(res, res, cy, cx, ay, ax)] = idx["skin"]

    eye_dx = rng.uniform(0.10, 0.14) * res
    eye_y = cy - rng.uniform(0.08, 0.14) * res
    eye_r = rng.uniform(0.030, 0.050) * res
    if rng.uniform() < 0.3:
        y0, y1 = int(round(eye_y - eye_r - 1)), int(round(eye_y + eye_r + 1))
        x0, x1 = int(round(cx - eye_dx - eye_r - 2)), int(round(cx + eye_dx + eye_r + 2))
        band = np.zeros_like(labels, dtype=bool)
        band[max(y0, 0):max(y1, 0), max(x0, 0):max(x1, 0)] = True
        band &= labels == idx["skin"]  # frames sit on the face only
        labels[band] = idx["eyeglass"]
    labels[_ellipse(res, res, eye_y, cx - eye_dx, eye_r, eye_r)] = idx["left_eye"]
    labels[_ellipse(res, res, eye_y, cx + eye_dx, eye_r, eye_r)] = idx["right_eye"]

    nose_y = cy + rng.uniform(0.00, 0.04) * res
    labels[_ellipse(res, res, nose_y, cx, rng.uniform(0.045, 0.07) * res, rng.uniform(0.025, 0.045) * res)] = idx["nose"]

    mouth_y = cy + rng.uniform(0.14, 0.20) * res
    labels[_ellipse(res, res, mouth_y, cx, rng.uniform(0.03, 0.05) * res, rng.uniform(0.08, 0.12) * res)] = idx["mouth"]
    return labels


def toy_color_table(rng: np.random.Generator, palette: CategoryPalette) -> np.ndarray:
    """Per-sample render colors around the palette anchors.

    Sample appearance is dominated by shared factors (global brightness and a
    color tint), the way lighting and skin tone move every region of a real
    face together, plus small independent per-category jitter. Style transfer
    is therefore both observable and learnable at desk scale.
    """
    anchors = palette.color_array().astype(np.float64)
    brightness = rng.uniform(*TOY_BRIGHTNESS_RANGE)
    tint = rng.uniform(-TOY_TINT, TOY_TINT, size=(1, 3))
    jitter = rng.integers(-TOY_COLOR_JITTER, TOY_COLOR_JITTER + 1, size=anchors.shape)
    table = anchors * brightness + tint + jitter
    return np.clip(np.round(table), 0, 255).astype(np.uint8)


def toy_render(rng: np.random.Generator, labels: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Flat-shade the label map with its color table plus a smooth gradient."""
    h, w = labels.shape
    ay = rng.uniform(-TOY_SHADE_VERTICAL, TOY_SHADE_VERTICAL)
    ax = rng.uniform(-TOY_SHADE_HORIZONTAL, TOY_SHADE_HORIZONTAL)
    ys = np.linspace(-0.5, 0.5, h)[:, None]
    xs = np.linspace(-0.5, 0.5, w)[None, :]
    shade = 1.0 + ay * ys + ax * xs
    rgb = table[labels].astype(np.float64) * shade[:, :, None]
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def oracle_parse(image_u8: np.ndarray, table: np.ndarray) -> LabelMask:
    """Nearest-color classification against a sample's color table."""
    px = image_u8.astype(np.int64)
    dists = ((px[:, :, None, :] - table[None, None, :, :].astype(np.int64)) ** 2).sum(axis=3)
    return LabelMask(np.argmin(dists, axis=2).astype(np.uint8))


def make_toy_dataset(n: int, resolution: int, seed: int, out_dir) -> DatasetManifest:
    """Generate n samples under out_dir; byte-identical for equal seeds."""
    if n < 2:
        raise ValueError("need n >= 2 (style copy draws reference pairs)")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    palette = DEFAULT_PALETTE
    rng = np.random.default_rng(seed)

    ids, tables = [], {}
    for i in range(n):
        sid = f"toy{i:05d}"
        labels = toy_mask_geometry(rng, resolution, palette)
        table = toy_color_table(rng, palette)
        rendered = toy_render(rng, labels, table)
        (out / "masks" / f"{sid}.png").write_bytes(encode_mask_png(LabelMask(labels), palette))
        (out / "images" / f"{sid}.png").write_bytes(encode_image_png(image_from_uint8(rendered)))
        tables[sid] = table.tolist()
        ids.append(sid)

    cut = max(1, int(n * 0.9))
    split = {"train": ids[:cut], "test": ids[cut:]}
    palette.save(out / "palette.json")
    (out / "split.json").write_text(json.dumps(split, indent=2) + "\n")
    (out / "colors.json").write_text(json.dumps(tables) + "\n")
    return DatasetManifest(out, split["train"], split["test"], palette, resolution)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    samples: List[Sample]
    refs: Optional[List[Sample]] = None

    def __len__(self) -> int:
        return len(self.samples)


def batch_id_stream(
    ids: Sequence[str], batch_size: int, seed: int, with_ref: bool = False,
    epochs: Optional[int] = None,
) -> Iterator[tuple]:
    """Yield (batch_ids, ref_ids) tuples; cheap to fast-forward for resume.

    Epochs reshuffle deterministically from the seed. The reference
    assignment is a cyclic shift of the shuffled batch, so no element is
    ever its own reference. Trailing partial batches are dropped.
    """
    if batch_size > len(ids):
        raise ValueError(f"batch_size {batch_size} exceeds split size {len(ids)}")
    if with_ref and batch_size < 2:
        raise ValueError("with_ref needs batch_size >= 2")
    rng = np.random.default_rng(seed)
    epoch = 0
    while epochs is None or epoch < epochs:
        perm = rng.permutation(len(ids))
        for start in range(0, len(ids) - batch_size + 1, batch_size):
            chosen = [ids[j] for j in perm[start:start + batch_size]]
            refs = chosen[1:] + chosen[:1] if with_ref else None
            yield chosen, refs
        epoch += 1


def minibatch(
    manifest: DatasetManifest, split: str, batch_size: int, seed: int,
    with_ref: bool = False, epochs: Optional[int] = None, skip: int = 0,
) -> Iterator[Batch]:
    """Stream shuffled sample batches; ``skip`` fast-forwards without I/O."""
    stream = batch_id_stream(manifest.ids(split), batch_size, seed, with_ref, epochs)
    for _ in range(skip):
        next(stream)
    for chosen, refs in stream:
        yield Batch(
            samples=[manifest.load_sample(i) for i in chosen],
            refs=None if refs is None else [manifest.load_sample(i) for i in refs],
        )
