"""Dense mapping network: style encoder, generation backbone, alpha blender.

The style encoder reads a (target image, target mask) pair through two
conv branches. Mask-branch features modulate image-branch features at
every stage, either through spatial feature transform layers (gamma * F
+ beta predicted per position) or, for the ablation, through channel
concatenation. Pooled features feed per-residual-block heads that emit
one (scale, shift) pair per block; those pairs drive adaptive instance
normalization inside the backbone's residual blocks, so the style of the
target image lands on whatever mask the backbone is given.

The alpha blender maps two candidate renders to a per-pixel mixing weight
in (0, 1); blending is a pointwise convex combination.
"""
from __future__ import annotations

from typing import List, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

FUSION_MODES = ("sft", "concat")

# per-channel (scale, shift) pairs, one per AdaIN residual block: [B, ch] each
StyleParams = List[Tuple[torch.Tensor, torch.Tensor]]


def sft_modulate(feat: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Elementwise gamma * feat + beta; all three shapes must match."""
    if feat.shape != gamma.shape or feat.shape != beta.shape:
        raise ValueError(
            f"shape mismatch: feat {tuple(feat.shape)}, gamma {tuple(gamma.shape)}, "
            f"beta {tuple(beta.shape)}"
        )
    return gamma * feat + beta


def adain(z: torch.Tensor, x: torch.Tensor, y: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Instance-standardize per channel, then apply external scale/shift.

    x and y are [B, ch] (or [ch]) vectors; eps guards constant channels.
    """
    if x.dim() == 1:
        x = x.unsqueeze(0).expand(z.shape[0], -1)
        y = y.unsqueeze(0).expand(z.shape[0], -1)
    if x.shape[1] != z.shape[1]:
        raise ValueError(f"style width {x.shape[1]} != channel count {z.shape[1]}")
    mean = z.mean(dim=(2, 3), keepdim=True)
    std = torch.sqrt(z.var(dim=(2, 3), keepdim=True, unbiased=False) + eps)
    return x[:, :, None, None] * (z - mean) / std + y[:, :, None, None]


class SftLayer(nn.Module):
    """Predict (gamma, beta) from condition features; no normalization inside."""

    def __init__(self, cond_ch: int, feat_ch: int, hidden: int = None):
        super().__init__()
        hidden = hidden or feat_ch
        self.gamma = nn.Sequential(
            nn.Conv2d(cond_ch, hidden, 3, 1, 1), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(hidden, feat_ch, 3, 1, 1),
        )
        self.beta = nn.Sequential(
            nn.Conv2d(cond_ch, hidden, 3, 1, 1), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(hidden, feat_ch, 3, 1, 1),
        )

    def forward(self, feat: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return sft_modulate(feat, 1.0 + self.gamma(cond), self.beta(cond))


class ConcatFuse(nn.Module):
    """Ablation fusion: concatenate condition channels, project back."""

    def __init__(self, cond_ch: int, feat_ch: int):
        super().__init__()
        self.proj = nn.Conv2d(feat_ch + cond_ch, feat_ch, 1)

    def forward(self, feat: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return self.proj(torch.cat([feat, cond], dim=1))


class StyleEncoder(nn.Module):
    """Two-branch encoder emitting AdaIN parameters for R residual blocks.

    No instance normalization anywhere in this module (it would strip the
    style statistics the encoder exists to capture).
    """

    def __init__(self, num_categories: int, res_channels: int, num_res_blocks: int,
                 base_width: int = 8, stages: int = 4, fusion_mode: str = "sft"):
        super().__init__()
        if fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        self.fusion_mode = fusion_mode
        self.num_res_blocks = num_res_blocks
        self.init_mode = "he"  # no norm layers here: flat small init would freeze it
        widths = [base_width * 2 ** i for i in range(stages)]

        img_convs, mask_convs, fusers = [], [], []
        in_img, in_mask = 3, num_categories
        for w in widths:
            img_convs.append(nn.Sequential(
                nn.Conv2d(in_img, w, 3, 2, 1), nn.LeakyReLU(0.2, inplace=True)))
            mask_convs.append(nn.Sequential(
                nn.Conv2d(in_mask, w, 3, 2, 1), nn.LeakyReLU(0.2, inplace=True)))
            fusers.append(SftLayer(w, w) if fusion_mode == "sft" else ConcatFuse(w, w))
            in_img = in_mask = w
        self.img_convs = nn.ModuleList(img_convs)
        self.mask_convs = nn.ModuleList(mask_convs)
        self.fusers = nn.ModuleList(fusers)

        trunk = widths[-1]
        self.trunk = nn.Sequential(nn.Linear(trunk, trunk), nn.LeakyReLU(0.2, inplace=True))
        self.scale_heads = nn.ModuleList(nn.Linear(trunk, res_channels) for _ in range(num_res_blocks))
        self.shift_heads = nn.ModuleList(nn.Linear(trunk, res_channels) for _ in range(num_res_blocks))

    def forward(self, image: torch.Tensor, onehot: torch.Tensor) -> StyleParams:
        if image.shape[0] != onehot.shape[0] or image.shape[2:] != onehot.shape[2:]:
            raise ValueError(
                f"image {tuple(image.shape)} and mask {tuple(onehot.shape)} must pair up"
            )
        f_img, f_mask = image, onehot
        for conv_i, conv_m, fuse in zip(self.img_convs, self.mask_convs, self.fusers):
            f_img = conv_i(f_img)
            f_mask = conv_m(f_mask)
            f_img = fuse(f_img, f_mask)
        pooled = self.trunk(f_img.mean(dim=(2, 3)))
        # scales parameterized around identity so generation starts sane
        return [
            (1.0 + sh(pooled), yh(pooled))
            for sh, yh in zip(self.scale_heads, self.shift_heads)
        ]


class AdainResBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, 1, 1)
        self.conv2 = nn.Conv2d(ch, ch, 3, 1, 1)

    def forward(self, z, x, y):
        h = F.relu(adain(self.conv1(z), x, y))
        h = adain(self.conv2(h), x, y)
        return z + h


def _down(in_ch, out_ch):
    return nn.Sequential(nn.Conv2d(in_ch, out_ch, 3, 2, 1),
                         nn.InstanceNorm2d(out_ch), nn.ReLU(inplace=True))


def _up(in_ch, out_ch, norm: bool = True):
    conv = nn.ConvTranspose2d(in_ch, out_ch, 3, 2, 1, output_padding=1)
    if norm:
        return nn.Sequential(conv, nn.InstanceNorm2d(out_ch), nn.ReLU(inplace=True))
    return nn.Sequential(conv, nn.ReLU(inplace=True))


class GeneratorBackbone(nn.Module):
    """Mask-to-image generator: conv encoder, AdaIN residual core, deconv decoder.

    Layout mirrors the c7s1-k / d / R / u / c7s1-3 family scaled by a width
    factor; AdaIN lives in the residual blocks, the encoder uses instance
    norm, output is tanh-bounded. With ``up_norm`` the decoder convs also
    carry instance norm (the full-scale recipe); without it the decoder is
    norm-free, which at desk widths is what lets the AdaIN-injected style
    statistics reach the output instead of being re-standardized away.
    """

    def __init__(self, num_categories: int, base_width: int = 8, num_res_blocks: int = 4,
                 downs: int = 4, up_norm: bool = False):
        super().__init__()
        widths = [base_width * 2 ** i for i in range(downs + 1)]
        self.head = nn.Sequential(nn.Conv2d(num_categories, widths[0], 7, 1, 3),
                                  nn.InstanceNorm2d(widths[0]), nn.ReLU(inplace=True))
        self.downs = nn.Sequential(*[_down(widths[i], widths[i + 1]) for i in range(downs)])
        self.res_blocks = nn.ModuleList(AdainResBlock(widths[-1]) for _ in range(num_res_blocks))
        self.ups = nn.Sequential(
            *[_up(widths[i + 1], widths[i], up_norm) for i in reversed(range(downs))])
        self.tail = nn.Sequential(nn.Conv2d(widths[0], 3, 7, 1, 3), nn.Tanh())
        self.res_channels = widths[-1]

    def forward(self, onehot: torch.Tensor, style: StyleParams) -> torch.Tensor:
        if len(style) != len(self.res_blocks):
            raise ValueError(f"expected {len(self.res_blocks)} style pairs, got {len(style)}")
        h = self.downs(self.head(onehot))
        for block, (x, y) in zip(self.res_blocks, style):
            h = block(h, x, y)
        return self.tail(self.ups(h))


class DenseMappingNetwork(nn.Module):
    """Style encoder + backbone; generate(style(image, mask_t), mask_src)."""

    def __init__(self, num_categories: int, width_scale: float = 0.125,
                 num_res_blocks: int = 4, fusion_mode: str = "sft", downs: int = 4,
                 up_norm: bool = False):
        super().__init__()
        gen_width = max(2, round(64 * width_scale))
        style_width = max(2, round(64 * width_scale))
        self.backbone = GeneratorBackbone(num_categories, gen_width, num_res_blocks, downs,
                                          up_norm)
        self.style_encoder = StyleEncoder(
            num_categories, self.backbone.res_channels, num_res_blocks,
            base_width=style_width, stages=downs, fusion_mode=fusion_mode,
        )

    def style(self, image: torch.Tensor, onehot: torch.Tensor) -> StyleParams:
        return self.style_encoder(image, onehot)

    def generate(self, style: StyleParams, onehot: torch.Tensor) -> torch.Tensor:
        return self.backbone(onehot, style)

    def forward(self, image: torch.Tensor, onehot_target: torch.Tensor,
                onehot_source: torch.Tensor | None = None) -> torch.Tensor:
        style = self.style(image, onehot_target)
        return self.generate(style, onehot_target if onehot_source is None else onehot_source)


class PlainResBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(ch, ch, 3, 1, 1), nn.InstanceNorm2d(ch), nn.ReLU(inplace=True),
            nn.Conv2d(ch, ch, 3, 1, 1), nn.InstanceNorm2d(ch),
        )

    def forward(self, z):
        return z + self.body(z)


class AlphaBlender(nn.Module):
    """Predict a per-pixel alpha in (0, 1) from two candidate renders.

    Narrower than the generator: three downsampling stages and three
    residual blocks, instance norm throughout.
    """

    def __init__(self, width_scale: float = 0.125):
        super().__init__()
        base = max(2, round(32 * width_scale))
        widths = [base * 2 ** i for i in range(4)]
        self.net = nn.Sequential(
            nn.Conv2d(6, widths[0], 7, 1, 3), nn.InstanceNorm2d(widths[0]), nn.ReLU(inplace=True),
            *[_down(widths[i], widths[i + 1]) for i in range(3)],
            *[PlainResBlock(widths[3]) for _ in range(3)],
            *[_up(widths[i + 1], widths[i]) for i in reversed(range(3))],
            nn.Conv2d(widths[0], 1, 7, 1, 3), nn.Sigmoid(),
        )

    def forward(self, inter: torch.Tensor, outer: torch.Tensor) -> torch.Tensor:
        if inter.shape != outer.shape:
            raise ValueError(f"inputs must share a shape: {tuple(inter.shape)} vs {tuple(outer.shape)}")
        return self.net(torch.cat([inter, outer], dim=1))


def alpha_blend(blender: AlphaBlender, inter: torch.Tensor,
                outer: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Convex per-pixel combination of the two renders; returns (blend, alpha)."""
    alpha = blender(inter, outer)
    return alpha * inter + (1.0 - alpha) * outer, alpha


def style_params_shapes(style: StyleParams) -> List[Tuple[int, ...]]:
    return [tuple(x.shape) for x, _ in style]
