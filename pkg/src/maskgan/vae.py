"""Variational autoencoder over label masks.

The encoder/decoder pair is a mirror-shaped conv stack (no skip
connections, batch norm throughout) bottlenecked through a latent vector.
Its latent space is the structure manifold that editing simulation
traverses: perturbed masks come from moving the posterior mean of a
target mask toward/away from a reference mask's mean and decoding.

Loss conventions: the sampling rule is z = mu + r * exp(log_sigma)
(log_sigma acts as a log-std). The divergence term defaults to
0.5 * sum(mu^2 + exp(s) - s - 1), which pairs with a log-variance reading
of s; ``convention="standard"`` switches to the log-std-consistent
0.5 * sum(mu^2 + exp(2s) - 2s - 1) instead. Both are exposed because the
default is what trains the shipped models.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .masks import LabelMask, label_to_onehot
from .palette import CategoryPalette

KL_CONVENTIONS = ("paper", "standard")


class MaskVae(nn.Module):
    """Conv encoder to (mu, log_sigma) and mirrored deconv decoder to logits."""

    def __init__(self, num_categories: int, latent_dim: int = 64, base_width: int = 16,
                 resolution: int = 64):
        super().__init__()
        if resolution < 4 or resolution & (resolution - 1):
            raise ValueError("resolution must be a power of two >= 4")
        self.num_categories = num_categories
        self.latent_dim = latent_dim
        self.resolution = resolution
        # halve until the bottleneck sits at 2-4 px, widths doubling (capped at 8x)
        stages = max(1, resolution.bit_length() - 3)
        widths = [base_width * min(2 ** i, 8) for i in range(stages)]
        self.bottom = resolution // (2 ** stages)

        enc = []
        in_ch = num_categories
        for w in widths:
            enc += [nn.Conv2d(in_ch, w, 4, 2, 1), nn.BatchNorm2d(w), nn.ReLU(inplace=True)]
            in_ch = w
        self.encoder = nn.Sequential(*enc)
        flat = widths[-1] * self.bottom * self.bottom
        self.fc_mu = nn.Linear(flat, latent_dim)
        self.fc_log_sigma = nn.Linear(flat, latent_dim)

        self.fc_up = nn.Linear(latent_dim, flat)
        dec = []
        rev = widths[::-1]
        for i, w in enumerate(rev):
            out_ch = rev[i + 1] if i + 1 < len(rev) else base_width
            dec += [nn.ConvTranspose2d(w, out_ch, 4, 2, 1), nn.BatchNorm2d(out_ch),
                    nn.ReLU(inplace=True)]
        dec.append(nn.Conv2d(base_width, num_categories, 3, 1, 1))
        self.decoder = nn.Sequential(*dec)
        self._top_width = widths[-1]

    def encode(self, onehot: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if onehot.shape[-1] != self.resolution or onehot.shape[-2] != self.resolution:
            raise ValueError(
                f"expected {self.resolution}x{self.resolution} input, got {tuple(onehot.shape)}"
            )
        h = self.encoder(onehot).flatten(1)
        return self.fc_mu(h), self.fc_log_sigma(h)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        h = self.fc_up(z).view(-1, self._top_width, self.bottom, self.bottom)
        return self.decoder(h)


@dataclass(frozen=True)
class LatentCode:
    mu: torch.Tensor
    log_sigma: torch.Tensor
    z: Optional[torch.Tensor] = None


def reparameterize(mu: torch.Tensor, log_sigma: torch.Tensor,
                   generator: torch.Generator | None = None,
                   noise: torch.Tensor | None = None) -> torch.Tensor:
    """z = mu + r * exp(log_sigma) with r ~ N(0, I) from an explicit stream."""
    if noise is None:
        noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    return mu + noise * torch.exp(log_sigma)


def kl_loss(mu: torch.Tensor, log_sigma: torch.Tensor, convention: str = "paper") -> torch.Tensor:
    """Divergence from the unit prior, averaged over the batch. Always >= 0."""
    if convention not in KL_CONVENTIONS:
        raise ValueError(f"convention must be one of {KL_CONVENTIONS}")
    if convention == "paper":
        per = mu.pow(2).sum(dim=1) + (torch.exp(log_sigma) - log_sigma - 1).sum(dim=1)
    else:
        per = mu.pow(2).sum(dim=1) + (torch.exp(2 * log_sigma) - 2 * log_sigma - 1).sum(dim=1)
    return 0.5 * per.mean()


def reconstruction_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel categorical cross-entropy; target is a label map."""
    if int(target.max()) >= logits.shape[1]:
        raise ValueError(f"label {int(target.max())} >= channel count {logits.shape[1]}")
    return F.cross_entropy(logits, target)


def vae_total_loss(model: MaskVae, onehot: torch.Tensor, labels: torch.Tensor,
                   lambda_kl: float, convention: str = "paper",
                   generator: torch.Generator | None = None,
                   noise: torch.Tensor | None = None):
    """Reconstruction + lambda_kl * KL on one batch; returns (loss, parts)."""
    mu, log_sigma = model.encode(onehot)
    z = reparameterize(mu, log_sigma, generator=generator, noise=noise)
    logits = model.decode(z)
    recon = reconstruction_loss(logits, labels)
    kl = kl_loss(mu, log_sigma, convention)
    return recon + lambda_kl * kl, {"recon": recon, "kl": kl}


def harden_logits(logits: torch.Tensor) -> torch.Tensor:
    """Per-pixel argmax (lowest index wins ties) -> label maps [B, H, W]."""
    return logits.argmax(dim=1)


def encode_mask(model: MaskVae, mask: LabelMask, palette: CategoryPalette) -> torch.Tensor:
    onehot = label_to_onehot(mask, palette).values
    return torch.from_numpy(np.ascontiguousarray(onehot.transpose(2, 0, 1))).unsqueeze(0)


@dataclass(frozen=True)
class TraverseResult:
    inter: LabelMask
    outer: LabelMask
    z_target: torch.Tensor
    z_ref: torch.Tensor
    z_inter: torch.Tensor
    z_outer: torch.Tensor


@torch.no_grad()
def latent_traverse(model: MaskVae, target: LabelMask, ref: LabelMask,
                    lambda_inter: float, palette: CategoryPalette) -> TraverseResult:
    """Perturb the target's latent mean toward/away from the reference.

    Uses posterior means as the latent points, so traversal is
    deterministic. The two outputs are decoded and hardened label masks at
    z +- (z_ref - z) / lambda_inter; swapping target and ref negates the
    perturbation vector, exchanging the toward/away roles.
    """
    if lambda_inter <= 0:
        raise ValueError("lambda_inter must be positive")
    was_training = model.training
    model.eval()
    try:
        z_t, _ = model.encode(encode_mask(model, target, palette))
        z_r, _ = model.encode(encode_mask(model, ref, palette))
        delta = (z_r - z_t) / lambda_inter
        z_inter, z_outer = z_t + delta, z_t - delta
        hard = harden_logits(model.decode(torch.cat([z_inter, z_outer], dim=0)))
        inter = LabelMask(hard[0].numpy().astype(np.uint8))
        outer = LabelMask(hard[1].numpy().astype(np.uint8))
    finally:
        if was_training:
            model.train()
    return TraverseResult(inter, outer, z_t[0], z_r[0], z_inter[0], z_outer[0])


@torch.no_grad()
def traversal_profile(model: MaskVae, start: LabelMask, end: LabelMask,
                      palette: CategoryPalette, steps: int = 8) -> List[float]:
    """Hamming distances from the step-0 decode along a linear latent path."""
    was_training = model.training
    model.eval()
    try:
        z_a, _ = model.encode(encode_mask(model, start, palette))
        z_b, _ = model.encode(encode_mask(model, end, palette))
        ts = torch.linspace(0, 1, steps, dtype=z_a.dtype)
        zs = z_a + ts[:, None] * (z_b - z_a)
        hard = harden_logits(model.decode(zs))
    finally:
        if was_training:
            model.train()
    base = hard[0]
    return [float((h != base).float().mean()) for h in hard]
