"""Quantitative evaluation: layout consistency, Fréchet distance, protocols.

Consistency re-parses generated images and scores per-pixel agreement with
the layout the generator was asked to render. The Fréchet distance is
computed between Gaussian fits of pooled extractor features, with the
matrix square root taken by eigendecomposition (tiny negative eigenvalues
clamp to zero; anything below -1e-8 warns).
"""
from __future__ import annotations

import json
import warnings
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
import torch

from .data import Batch, DatasetManifest, oracle_parse
from .masks import ImageTensor, LabelMask, image_to_uint8
from .training import TrainState, batch_to_tensors, labels_to_onehot_t

# parser signature: (image, sample_id of the style source) -> LabelMask
Parser = Callable[[ImageTensor, Optional[str]], LabelMask]

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": [
        "protocol", "num_samples", "pixel_accuracy", "per_category_iou",
        "fid", "feature_dim", "mae", "seed",
    ],
    "properties": {
        "protocol": {"enum": ["reconstruction", "style_copy"]},
        "num_samples": {"type": "integer", "minimum": 1},
        "pixel_accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "per_category_iou": {
            "type": "array",
            "items": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        },
        "fid": {"type": "number"},
        "feature_dim": {"type": "integer", "minimum": 1},
        "mae": {"type": "number", "minimum": 0},
        "seed": {"type": "integer"},
        "localization": {"type": ["number", "null"]},
    },
    "additionalProperties": False,
}


def color_table_parser(manifest: DatasetManifest) -> Parser:
    """Nearest-color parser over the toy generator's per-sample tables."""

    def parse(image: ImageTensor, style_id: Optional[str]) -> LabelMask:
        table = manifest.color_table(style_id) if style_id else None
        if table is None:
            raise ValueError(f"no color table for sample {style_id!r}")
        return oracle_parse(image_to_uint8(image), table)

    return parse


def consistency_report(pred_masks: Sequence[LabelMask], target_masks: Sequence[LabelMask],
                       num_categories: int) -> dict:
    """Pixel accuracy plus per-category IoU (None for absent categories)."""
    if len(pred_masks) != len(target_masks) or not pred_masks:
        raise ValueError("need equal, nonzero mask counts")
    correct = total = 0
    inter = np.zeros(num_categories, dtype=np.int64)
    union = np.zeros(num_categories, dtype=np.int64)
    for pred, want in zip(pred_masks, target_masks):
        if pred.labels.shape != want.labels.shape:
            raise ValueError("mask shapes disagree")
        correct += int((pred.labels == want.labels).sum())
        total += pred.labels.size
        for c in range(num_categories):
            p = pred.labels == c
            w = want.labels == c
            inter[c] += int((p & w).sum())
            union[c] += int((p | w).sum())
    iou = [None if union[c] == 0 else inter[c] / union[c] for c in range(num_categories)]
    return {
        "pixel_accuracy": correct / total,
        "per_category_iou": iou,
        "num_samples": len(pred_masks),
    }


def parse_consistency(parser: Parser, images: Sequence[ImageTensor],
                      masks: Sequence[LabelMask], num_categories: int,
                      style_ids: Optional[Sequence[Optional[str]]] = None) -> dict:
    """Agreement between parser(generated image) and the requested layout."""
    if style_ids is None:
        style_ids = [None] * len(images)
    preds = [parser(img, sid) for img, sid in zip(images, style_ids)]
    for p in preds:
        if int(p.labels.max()) >= num_categories:
            raise ValueError("parser emitted labels outside the palette")
    return consistency_report(preds, masks, num_categories)


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), the cross term
    evaluated through the symmetric form sqrt(S_a) S_b sqrt(S_a).
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("features must be finite")
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"need N x D feature matrices, got {a.shape} and {b.shape}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    sqrt_a = _sqrt_psd(cov_a)
    cross = sqrt_a @ cov_b @ sqrt_a
    vals = np.linalg.eigvalsh((cross + cross.T) / 2)
    if vals.min() < -1e-8:
        warnings.warn(f"covariance cross-product eigenvalue {vals.min():.3e} < -1e-8")
    trace_sqrt = np.sqrt(np.clip(vals, 0, None)).sum()
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)


def derangement_pairing(ids: Sequence[str], seed: int) -> List[str]:
    """Shuffled source ids where no target maps to itself."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    order = [ids[i] for i in perm]
    shifted = order[1:] + order[:1]
    source_of = dict(zip(order, shifted))
    return [source_of[i] for i in ids]


def dilate_category(mask: LabelMask, category: int, radius: int = 2) -> Optional[LabelMask]:
    """Grow one category's region by a square radius; None if it is absent."""
    src = mask.labels == category
    if not src.any():
        return None
    grown = np.zeros_like(src)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = np.zeros_like(src)
            ys = slice(max(dy, 0), mask.height + min(dy, 0))
            yd = slice(max(-dy, 0), mask.height + min(-dy, 0))
            xs = slice(max(dx, 0), mask.width + min(dx, 0))
            xd = slice(max(-dx, 0), mask.width + min(-dx, 0))
            shifted[yd, xd] = src[ys, xs]
            grown |= shifted
    labels = mask.labels.copy()
    labels[grown] = category
    return LabelMask(labels)


@torch.no_grad()
def edit_localization(state: TrainState, manifest: DatasetManifest, category: int,
                      radius: int = 2, limit: int = 16) -> float:
    """Mean changed-pixel-mass fraction inside the edit box over test edits.

    Each test sample is re-rendered with its own mask and with that mask's
    ``category`` region dilated; a well-behaved model changes pixels mostly
    inside the edited region's bounding box.
    """
    state.dmn.eval()
    scores = []
    for sid in manifest.ids("test"):
        if len(scores) >= limit:
            break
        sample = manifest.load_sample(sid)
        edited = dilate_category(sample.mask, category, radius)
        if edited is None:
            continue
        images, onehot_t, _ = batch_to_tensors(Batch([sample]), manifest.palette.count)
        onehot_e = labels_to_onehot_t(
            torch.from_numpy(edited.labels.astype(np.int64)).unsqueeze(0),
            manifest.palette.count)
        style = state.dmn.style(images, onehot_t)
        base = state.dmn.generate(style, onehot_t)[0].numpy().transpose(1, 2, 0)
        moved = state.dmn.generate(style, onehot_e)[0].numpy().transpose(1, 2, 0)
        score = localization_score(base, moved, sample.mask.labels, edited.labels)
        if score is not None:
            scores.append(score)
    if not scores:
        raise ValueError("no test sample carries the edited category")
    return float(np.mean(scores))


def localization_score(before: np.ndarray, after: np.ndarray,
                       mask_before: np.ndarray, mask_after: np.ndarray) -> Optional[float]:
    """Fraction of changed-pixel mass inside the edited region's bounding box."""
    edited = mask_before != mask_after
    if not edited.any():
        return None
    ys, xs = np.nonzero(edited)
    y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
    change = np.abs(after - before).sum(axis=2)
    total = change.sum()
    if total <= 0:
        return None
    return float(change[y0:y1, x0:x1].sum() / total)


@torch.no_grad()
def eval_run(state: TrainState, manifest: DatasetManifest, protocol: str,
             seed: int = 0, parser: Optional[Parser] = None,
             out_path: Optional[Path] = None, limit: Optional[int] = None) -> dict:
    """Generate the test split under a protocol and score it.

    reconstruction: source mask = target mask. style_copy: sources come
    from a derangement of the test ids, so structure and style always come
    from different samples. The report carries consistency against the
    source layout, Fréchet distance of pooled extractor features between
    real and generated sets, and mean absolute error against the target.
    """
    if protocol not in ("reconstruction", "style_copy"):
        raise ValueError(f"unknown protocol {protocol!r}")
    ids = manifest.ids("test")
    if not ids:
        raise ValueError("empty test split")
    if limit is not None:
        ids = ids[:limit]
    if parser is None:
        parser = color_table_parser(manifest)
    source_ids = derangement_pairing(ids, seed) if protocol == "style_copy" else list(ids)

    C = manifest.palette.count
    state.dmn.eval()
    gen_images: List[ImageTensor] = []
    source_masks: List[LabelMask] = []
    mae_sum = mae_count = 0.0
    real_feats, fake_feats = [], []
    for start in range(0, len(ids), 16):
        tgt = [manifest.load_sample(i) for i in ids[start:start + 16]]
        src = [manifest.load_sample(i) for i in source_ids[start:start + 16]]
        images, onehot_t, _ = batch_to_tensors(Batch(tgt), C)
        _, onehot_s, src_labels = batch_to_tensors(Batch(src), C)
        style = state.dmn.style(images, onehot_t)
        out = state.dmn.generate(style, onehot_s)
        mae_sum += (out - images).abs().sum().item()
        mae_count += out.numel()
        real_feats.append(state.extractor.pooled_features(images).numpy())
        fake_feats.append(state.extractor.pooled_features(out).numpy())
        for i in range(out.shape[0]):
            gen_images.append(ImageTensor(out[i].numpy().transpose(1, 2, 0)))
            source_masks.append(LabelMask(src_labels[i].numpy().astype(np.uint8)))

    consistency = parse_consistency(parser, gen_images, source_masks, C, style_ids=ids)
    report = {
        "protocol": protocol,
        "num_samples": len(ids),
        "pixel_accuracy": consistency["pixel_accuracy"],
        "per_category_iou": consistency["per_category_iou"],
        "fid": fid(np.concatenate(real_feats), np.concatenate(fake_feats)),
        "feature_dim": int(real_feats[0].shape[1]),
        "mae": mae_sum / mae_count,
        "seed": seed,
    }
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report, indent=2) + "\n")
    return report
