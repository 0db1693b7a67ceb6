"""Multi-scale conditional patch discriminators and the generator losses.

Two structurally identical patch discriminators score channel-concatenated
(image, one-hot mask) pairs; the second sees 2x average-pooled inputs for
a wider receptive field. Generator supervision is the sum of an
adversarial term, a discriminator feature-matching L1, and a perceptual L1
over a frozen feature extractor.

The printed adversarial objective is not numerically usable as written, so
the default is the least-squares surrogate the backbone family trains
with; ``gan_loss="bce"`` selects the non-saturating cross-entropy reading
instead.
"""
from __future__ import annotations

import logging
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

log = logging.getLogger(__name__)

GAN_LOSSES = ("lsgan", "bce")


class PatchDiscriminator(nn.Module):
    """Four stride-2 conv stages (instance norm, leaky relu) to a score map."""

    def __init__(self, in_channels: int, base_width: int = 8, num_layers: int = 4):
        super().__init__()
        widths = [base_width * 2 ** i for i in range(num_layers)]
        layers = []
        in_ch = in_channels
        for w in widths:
            layers.append(nn.Sequential(
                nn.Conv2d(in_ch, w, 4, 2, 1), nn.InstanceNorm2d(w),
                nn.LeakyReLU(0.2, inplace=True),
            ))
            in_ch = w
        self.stages = nn.ModuleList(layers)
        self.score = nn.Conv2d(in_ch, 1, 4, 1, 1)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return self.score(x), feats


class DiscriminatorSet(nn.Module):
    """D_1 at full resolution, D_2 on 2x average-downsampled inputs."""

    def __init__(self, num_categories: int, width_scale: float = 0.125, num_layers: int = 4):
        super().__init__()
        base = max(2, round(64 * width_scale))
        in_ch = 3 + num_categories
        self.d1 = PatchDiscriminator(in_ch, base, num_layers)
        self.d2 = PatchDiscriminator(in_ch, base, num_layers)

    def forward(self, image: torch.Tensor, onehot: torch.Tensor):
        """Returns (scores per scale, features per scale per layer)."""
        if image.shape[2:] != onehot.shape[2:] or image.shape[0] != onehot.shape[0]:
            raise ValueError(
                f"image {tuple(image.shape)} and mask {tuple(onehot.shape)} must pair up"
            )
        x = torch.cat([image, onehot], dim=1)
        s1, f1 = self.d1(x)
        s2, f2 = self.d2(F.avg_pool2d(x, 2))
        return [s1, s2], [f1, f2]


def _target_like(t: torch.Tensor, value: float) -> torch.Tensor:
    return torch.full_like(t, value)


def _score_loss(scores: List[torch.Tensor], real: bool, mode: str) -> torch.Tensor:
    total = 0.0
    for s in scores:
        if mode == "lsgan":
            total = total + 0.5 * (s - (1.0 if real else 0.0)).pow(2).mean()
        else:
            total = total + F.binary_cross_entropy_with_logits(
                s, _target_like(s, 1.0 if real else 0.0))
    return total


def adv_loss(ds: DiscriminatorSet, real: Tuple[torch.Tensor, torch.Tensor],
             fake: Tuple[torch.Tensor, torch.Tensor], mode: str = "lsgan"):
    """(d_loss, g_loss) over both scales; fake is detached for the d side."""
    if mode not in GAN_LOSSES:
        raise ValueError(f"gan_loss must be one of {GAN_LOSSES}")
    real_scores, _ = ds(*real)
    fake_img, fake_mask = fake
    fake_scores_d, _ = ds(fake_img.detach(), fake_mask)
    d_loss = _score_loss(real_scores, True, mode) + _score_loss(fake_scores_d, False, mode)
    fake_scores_g, _ = ds(fake_img, fake_mask)
    g_loss = _score_loss(fake_scores_g, True, mode)
    return d_loss, g_loss


def feat_match_loss(ds: DiscriminatorSet, real: Tuple[torch.Tensor, torch.Tensor],
                    fake: Tuple[torch.Tensor, torch.Tensor]) -> torch.Tensor:
    """L1 between discriminator features of real and fake pairs.

    Each layer term is its mean absolute difference (element-count
    normalized), summed over layers and scales. Real features carry no
    gradient.
    """
    with torch.no_grad():
        _, real_feats = ds(*real)
    _, fake_feats = ds(*fake)
    total = 0.0
    for rf_scale, ff_scale in zip(real_feats, fake_feats):
        for rf, ff in zip(rf_scale, ff_scale):
            total = total + (rf - ff).abs().mean()
    return total


class PerceptualExtractor(nn.Module):
    """Frozen conv stack with tapped activations for perceptual distance.

    At desk scale the weights are seed-pinned random (only relative
    distances matter); a tensor file of pretrained weights is a drop-in via
    ``from_path``. Parameters are never trainable.
    """

    TAP_WIDTHS = (8, 16, 32, 64, 64)

    def __init__(self, seed: int = 1234):
        super().__init__()
        convs = []
        in_ch = 3
        for i, w in enumerate(self.TAP_WIDTHS):
            convs.append(nn.Conv2d(in_ch, w, 3, 2 if i > 0 else 1, 1))
            in_ch = w
        self.convs = nn.ModuleList(convs)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for conv in self.convs:
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.2)
                conv.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @classmethod
    def from_path(cls, path) -> "PerceptualExtractor":
        ext = cls()
        state = torch.load(path, map_location="cpu", weights_only=True)
        ext.load_state_dict(state)
        for p in ext.parameters():
            p.requires_grad_(False)
        return ext

    def train(self, mode: bool = True):
        return super().train(False)  # frozen: never leaves eval mode

    def forward(self, image: torch.Tensor) -> List[torch.Tensor]:
        x = (image + 1.0) * 0.5  # extractor expects [0, 1]
        taps = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            taps.append(x)
        return taps

    @torch.no_grad()
    def pooled_features(self, image: torch.Tensor, tap: int = -2) -> torch.Tensor:
        """Globally pooled activations of one tap; used for distribution stats."""
        return self.forward(image)[tap].mean(dim=(2, 3))


def perceptual_loss(extractor: Optional[PerceptualExtractor], real: torch.Tensor,
                    fake: torch.Tensor) -> torch.Tensor:
    """Per-tap mean L1 between activations, summed over taps.

    With no extractor available this degrades to plain pixel L1 (a single
    identity tap) and says so in the log.
    """
    if extractor is None:
        log.warning("perceptual extractor unavailable; falling back to pixel L1")
        return (real - fake).abs().mean()
    total = 0.0
    real_taps = extractor(real)
    fake_taps = extractor(fake)
    for rt, ft in zip(real_taps, fake_taps):
        total = total + (rt.detach() - ft).abs().mean()
    return total


def total_generator_loss(ds: DiscriminatorSet, extractor: Optional[PerceptualExtractor],
                         real_image: torch.Tensor, fake_image: torch.Tensor,
                         cond_onehot: torch.Tensor, lambda_feat: float = 10.0,
                         lambda_percept: float = 10.0, gan_loss: str = "lsgan"):
    """Adversarial + weighted feature-matching + weighted perceptual terms.

    Returns (total, parts) where parts holds the unweighted components.
    Single discriminator pass per side; numerically identical to calling
    adv_loss and feat_match_loss separately.
    """
    if gan_loss not in GAN_LOSSES:
        raise ValueError(f"gan_loss must be one of {GAN_LOSSES}")
    with torch.no_grad():
        _, real_feats = ds(real_image, cond_onehot)
    fake_scores, fake_feats = ds(fake_image, cond_onehot)
    g_adv = _score_loss(fake_scores, True, gan_loss)
    feat = 0.0
    for rf_scale, ff_scale in zip(real_feats, fake_feats):
        for rf, ff in zip(rf_scale, ff_scale):
            feat = feat + (rf - ff).abs().mean()
    percept = perceptual_loss(extractor, real_image, fake_image)
    total = g_adv + lambda_feat * feat + lambda_percept * percept
    return total, {"adv": g_adv, "feat": feat, "percept": percept}
