"""Training orchestration: VAE pretraining, generator pretraining, and the
two-stage editing-simulation finetune.

The finetune alternates two updates per minibatch. Stage I is an ordinary
conditional-GAN step on (target image, target mask). Stage II simulates a
user edit: the frozen mask VAE perturbs the target mask toward and away
from a reference mask, the generator (one parameter set, applied twice)
renders both perturbed masks, the blender fuses the renders, and the
blended image is supervised against the target with the same composite
loss. Discriminators are shared across stages and stay conditioned on the
target mask.

Everything is seeded through explicit torch/numpy generators; reruns with
one seed reproduce losses bit-identically on a machine configuration, and
a checkpoint resume continues the exact trajectory (optimizer moments,
RNG streams, and data-stream position included).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, List, Optional

import numpy as np
import torch
import torch.nn as nn

from .adversarial import DiscriminatorSet, PerceptualExtractor, _score_loss, total_generator_loss
from .checkpoint import Checkpoint, load_checkpoint, mount, save_checkpoint
from .config import TrainConfig
from .data import Batch, DatasetManifest, minibatch
from .dmn import AlphaBlender, DenseMappingNetwork, alpha_blend
from .masks import LabelMask
from .palette import CategoryPalette
from .vae import MaskVae, harden_logits, kl_loss, reconstruction_loss, reparameterize

log = logging.getLogger(__name__)

METRICS_HEADER = "step,loss_total,loss_adv,loss_feat,loss_percept,stage"


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; a diagnostic snapshot is saved first."""


def init_weights(module: nn.Module, generator: torch.Generator, std: float = 0.02) -> None:
    """Deterministic re-init of all conv/linear weights from one stream.

    Layers under a module flagged ``init_mode = "he"`` get fan-in-scaled
    init instead of the flat N(0, std). The flat convention relies on a
    following norm layer to restore activation scale; in normalization-free
    subnets (the style encoder) it collapses activations and gradients to
    ~1e-6, which freezes the subnet at its bias values.
    """
    he_roots = [name for name, m in module.named_modules()
                if getattr(m, "init_mode", None) == "he"]

    def uses_he(name: str) -> bool:
        return any(name == root or name.startswith(root + ".") for root in he_roots)

    for name, m in sorted(module.named_modules(), key=lambda kv: kv[0]):
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            fan_in = m.weight[0].numel() if not isinstance(m, nn.ConvTranspose2d) \
                else m.weight.shape[0] * m.weight[0, 0].numel()
            layer_std = math.sqrt(2.0 / fan_in) if uses_he(name) else std
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=generator) * layer_std)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()


def batch_to_tensors(batch: Batch, num_categories: int):
    """(images [B,3,H,W], onehot [B,C,H,W], labels [B,H,W]) float32/long."""
    imgs = np.stack([s.image.values.transpose(2, 0, 1) for s in batch.samples])
    labels = np.stack([s.mask.labels for s in batch.samples]).astype(np.int64)
    labels_t = torch.from_numpy(labels)
    onehot = torch.zeros(len(batch), num_categories, *labels.shape[1:])
    onehot.scatter_(1, labels_t.unsqueeze(1), 1.0)
    return torch.from_numpy(imgs), onehot, labels_t


def labels_to_onehot_t(labels: torch.Tensor, num_categories: int) -> torch.Tensor:
    onehot = torch.zeros(labels.shape[0], num_categories, *labels.shape[1:])
    onehot.scatter_(1, labels.unsqueeze(1), 1.0)
    return onehot


class MetricsLog:
    """Append-only csv: step,loss_total,loss_adv,loss_feat,loss_percept,stage."""

    def __init__(self, path: Optional[Path]):
        self._fh: Optional[IO] = None
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fresh = not path.exists() or path.stat().st_size == 0
            self._fh = open(path, "a")
            if fresh:
                self._fh.write(METRICS_HEADER + "\n")

    def write(self, step: int, total: float, adv: float, feat: float,
              percept: float, stage: str) -> None:
        if self._fh is not None:
            self._fh.write(f"{step},{total:.8g},{adv:.8g},{feat:.8g},{percept:.8g},{stage}\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _adam(params, lr: float, config: TrainConfig):
    return torch.optim.Adam(params, lr=lr, betas=(config.beta1, config.beta2))


def _check_finite(value: float, what: str, snapshot):
    if not math.isfinite(value):
        path = snapshot()
        raise TrainingDiverged(f"{what} went non-finite; diagnostic snapshot at {path}")


# ---------------------------------------------------------------------------
# MaskVAE pretraining
# ---------------------------------------------------------------------------


def build_vae(config: TrainConfig, num_categories: int, seed_offset: int = 1) -> MaskVae:
    model = MaskVae(num_categories, config.latent_dim, config.vae_width, config.resolution)
    init_weights(model, torch.Generator().manual_seed(config.seed + seed_offset))
    return model


def pretrain_vae(config: TrainConfig, manifest: DatasetManifest,
                 out_dir: Optional[Path] = None, iters: Optional[int] = None,
                 log_losses: Optional[List[float]] = None,
                 resume: Optional[Path] = None) -> MaskVae:
    """Train the mask VAE until its iteration budget; checkpoint if out_dir."""
    C = manifest.palette.count
    model = build_vae(config, C)
    opt = _adam(model.parameters(), config.lr_pretrain, config)
    noise_gen = torch.Generator().manual_seed(config.seed + 101)
    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        model.load_state_dict(ckpt.namespace("vae"))
        opt.load_state_dict(ckpt.extras["opt"])
        noise_gen.set_state(ckpt.extras["noise_gen"])
        start = ckpt.iteration
    budget = iters if iters is not None else config.vae_iters
    metrics = MetricsLog(Path(out_dir) / "vae_metrics.csv" if out_dir else None)
    step = start

    def snapshot():
        path = Path(out_dir or ".") / "vae_diverged.ckpt"
        save_vae_checkpoint(path, config, model, step, opt=opt, noise_gen=noise_gen)
        return path

    model.train()
    stream = minibatch(manifest, "train", config.batch_size_vae, config.seed + 11, skip=start)
    for step, batch in zip(range(start, budget), stream):
        _, onehot, labels = batch_to_tensors(batch, C)
        mu, log_sigma = model.encode(onehot)
        z = reparameterize(mu, log_sigma, generator=noise_gen)
        logits = model.decode(z)
        recon = reconstruction_loss(logits, labels)
        kl = kl_loss(mu, log_sigma, config.kl_convention)
        loss = recon + config.lambda_kl * kl
        _check_finite(loss.item(), f"vae loss at step {step}", snapshot)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_losses is not None:
            log_losses.append(loss.item())
        metrics.write(step, loss.item(), 0.0, 0.0, 0.0, "vae")
        if step % 200 == 0:
            log.info("vae step %d: loss=%.4f recon=%.4f kl=%.3f", step, loss.item(),
                     recon.item(), kl.item())
    metrics.close()
    model.eval()
    if out_dir is not None:
        save_vae_checkpoint(Path(out_dir) / "vae.ckpt", config, model, budget,
                            palette=manifest.palette, opt=opt, noise_gen=noise_gen)
    return model


def save_vae_checkpoint(path, config: TrainConfig, model: MaskVae, iteration: int,
                        palette: Optional[CategoryPalette] = None,
                        opt: Optional[torch.optim.Adam] = None,
                        noise_gen: Optional[torch.Generator] = None) -> None:
    tensors: dict = {}
    mount(tensors, "vae", model.state_dict())
    extras: dict = {}
    if palette is not None:
        extras["palette"] = palette.to_json()
    if opt is not None:
        extras["opt"] = opt.state_dict()
    if noise_gen is not None:
        extras["noise_gen"] = noise_gen.get_state()
    save_checkpoint(path, config.to_dict(), iteration, tensors, extras)


def load_vae_checkpoint(path) -> tuple[MaskVae, TrainConfig]:
    ckpt = load_checkpoint(path)
    config = TrainConfig.from_dict(ckpt.config)
    state = ckpt.namespace("vae")
    num_categories = state["encoder.0.weight"].shape[1]
    model = MaskVae(num_categories, config.latent_dim, config.vae_width, config.resolution)
    model.load_state_dict(state)
    model.eval()
    return model, config


def vae_reconstruction_accuracy(model: MaskVae, manifest: DatasetManifest,
                                split: str = "test", limit: int = 200) -> float:
    """Mean pixel accuracy of hardened decode(encode(mask))."""
    model.eval()
    C = manifest.palette.count
    ids = manifest.ids(split)[:limit]
    correct = total = 0
    with torch.no_grad():
        for start in range(0, len(ids), 32):
            chunk = [manifest.load_sample(i) for i in ids[start:start + 32]]
            _, onehot, labels = batch_to_tensors(Batch(chunk), C)
            mu, _ = model.encode(onehot)
            hard = harden_logits(model.decode(mu))
            correct += (hard == labels).sum().item()
            total += labels.numel()
    return correct / total


# ---------------------------------------------------------------------------
# Trainable state for the GAN phases
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    config: TrainConfig
    palette: CategoryPalette
    dmn: DenseMappingNetwork
    blender: AlphaBlender
    discriminators: DiscriminatorSet
    vae: Optional[MaskVae]
    extractor: PerceptualExtractor
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    opt_b: torch.optim.Adam
    noise_gen: torch.Generator
    iteration: int = 0
    ebst_iteration: int = 0
    stage2_skipped: int = 0
    snapshots: List[dict] = field(default_factory=list)

    def set_learning_rate(self, lr: float) -> None:
        for opt in (self.opt_g, self.opt_d, self.opt_b):
            for group in opt.param_groups:
                group["lr"] = lr


def build_extractor(config: TrainConfig) -> PerceptualExtractor:
    if config.perceptual_weights_path:
        try:
            return PerceptualExtractor.from_path(config.perceptual_weights_path)
        except Exception as exc:  # fall back, but keep training
            log.warning("could not load perceptual weights from %s (%s); using pinned random",
                        config.perceptual_weights_path, exc)
    return PerceptualExtractor()


def scaled_depth(resolution: int, cap: int = 4) -> int:
    """Downsampling stages scaled with resolution (paper scale reaches 4)."""
    return max(1, min(cap, resolution.bit_length() - 4))


def init_train_state(config: TrainConfig, palette: CategoryPalette,
                     vae: Optional[MaskVae] = None, lr: Optional[float] = None) -> TrainState:
    C = palette.count
    depth = scaled_depth(config.resolution)
    dmn = DenseMappingNetwork(C, config.width_scale, config.residual_blocks,
                              config.fusion_mode, downs=depth,
                              up_norm=config.decoder_norm == "in")
    blender = AlphaBlender(config.width_scale)
    ds = DiscriminatorSet(C, config.width_scale, num_layers=depth)
    gen = torch.Generator().manual_seed(config.seed + 2)
    init_weights(dmn, gen)
    init_weights(blender, gen)
    init_weights(ds, gen)
    if vae is not None:
        freeze_vae(vae)
    lr = lr if lr is not None else config.lr_pretrain
    return TrainState(
        config=config,
        palette=palette,
        dmn=dmn,
        blender=blender,
        discriminators=ds,
        vae=vae,
        extractor=build_extractor(config),
        opt_g=_adam(dmn.parameters(), lr, config),
        opt_d=_adam(ds.parameters(), lr, config),
        opt_b=_adam(blender.parameters(), lr, config),
        noise_gen=torch.Generator().manual_seed(config.seed + 102),
    )


def freeze_vae(vae: MaskVae) -> None:
    vae.eval()
    for p in vae.parameters():
        p.requires_grad_(False)


def save_train_state(path, state: TrainState) -> None:
    tensors: dict = {}
    mount(tensors, "dmn", state.dmn.state_dict())
    mount(tensors, "blender", state.blender.state_dict())
    mount(tensors, "disc", state.discriminators.state_dict())
    if state.vae is not None:
        mount(tensors, "vae", state.vae.state_dict())
    extras = {
        "palette": state.palette.to_json(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "opt_b": state.opt_b.state_dict(),
        "noise_gen": state.noise_gen.get_state(),
        "ebst_iteration": state.ebst_iteration,
        "stage2_skipped": state.stage2_skipped,
        "snapshots": state.snapshots,
    }
    save_checkpoint(path, state.config.to_dict(), state.iteration, tensors, extras)


def load_train_state(path, lr: Optional[float] = None) -> TrainState:
    ckpt = load_checkpoint(path)
    config = TrainConfig.from_dict(ckpt.config)
    palette = CategoryPalette.from_json(ckpt.extras["palette"])
    state = init_train_state(config, palette, lr=lr)
    state.dmn.load_state_dict(ckpt.namespace("dmn"))
    state.blender.load_state_dict(ckpt.namespace("blender"))
    state.discriminators.load_state_dict(ckpt.namespace("disc"))
    vae_state = ckpt.namespace("vae")
    if vae_state:
        vae = MaskVae(palette.count, config.latent_dim, config.vae_width, config.resolution)
        vae.load_state_dict(vae_state)
        freeze_vae(vae)
        state.vae = vae
    state.opt_g.load_state_dict(ckpt.extras["opt_g"])
    state.opt_d.load_state_dict(ckpt.extras["opt_d"])
    state.opt_b.load_state_dict(ckpt.extras["opt_b"])
    state.noise_gen.set_state(ckpt.extras["noise_gen"])
    state.iteration = ckpt.iteration
    state.ebst_iteration = ckpt.extras.get("ebst_iteration", 0)
    state.stage2_skipped = ckpt.extras.get("stage2_skipped", 0)
    state.snapshots = ckpt.extras.get("snapshots", [])
    if lr is not None:
        state.set_learning_rate(lr)
    return state


# ---------------------------------------------------------------------------
# Generator pretraining (stage-I objective only)
# ---------------------------------------------------------------------------


def gan_step(state: TrainState, images: torch.Tensor, onehot: torch.Tensor,
             input_onehot: Optional[torch.Tensor] = None,
             train_blender_on: Optional[tuple] = None):
    """One discriminator update + one generator update.

    ``input_onehot`` lets stage II feed perturbed masks to the backbone
    while conditioning the discriminator on the target mask;
    ``train_blender_on`` carries (render_a, render_b) to fuse, switching
    the generator update to the composite-output path.
    """
    cfg = state.config
    if train_blender_on is None:
        style = state.dmn.style(images, onehot)
        fake = state.dmn.generate(style, input_onehot if input_onehot is not None else onehot)
    else:
        fake, _ = alpha_blend(state.blender, *train_blender_on)

    cond = onehot
    real_scores, _ = state.discriminators(images, cond)
    fake_scores, _ = state.discriminators(fake.detach(), cond)
    d_loss = _score_loss(real_scores, True, cfg.gan_loss) + \
        _score_loss(fake_scores, False, cfg.gan_loss)
    state.opt_d.zero_grad()
    d_loss.backward()
    state.opt_d.step()

    total, parts = total_generator_loss(
        state.discriminators, state.extractor, images, fake, cond,
        cfg.lambda_feat, cfg.lambda_percept, cfg.gan_loss,
    )
    state.opt_g.zero_grad()
    if train_blender_on is not None:
        state.opt_b.zero_grad()
    total.backward()
    state.opt_g.step()
    if train_blender_on is not None:
        state.opt_b.step()
    return d_loss.item(), total.item(), {k: v.item() for k, v in parts.items()}


def pretrain_ga(config: TrainConfig, manifest: DatasetManifest,
                vae: Optional[MaskVae] = None, out_dir: Optional[Path] = None,
                iters: Optional[int] = None, log_losses: Optional[List[float]] = None,
                d_losses: Optional[List[float]] = None,
                state: Optional[TrainState] = None) -> TrainState:
    """Adversarially train the mapping network on (target image, target mask).

    Passing a loaded ``state`` resumes: the data stream fast-forwards to the
    stored iteration and optimizer/RNG state continues the exact trajectory.
    """
    if state is None:
        state = init_train_state(config, manifest.palette, vae=vae)
    budget = iters if iters is not None else config.gan_iters
    metrics = MetricsLog(Path(out_dir) / "gan_metrics.csv" if out_dir else None)

    def snapshot():
        path = Path(out_dir or ".") / "gan_diverged.ckpt"
        save_train_state(path, state)
        return path

    state.dmn.train()
    state.discriminators.train()
    stream = minibatch(manifest, "train", config.batch_size_gan, config.seed + 12,
                       skip=state.iteration)
    for _, batch in zip(range(state.iteration, budget), stream):
        images, onehot, _ = batch_to_tensors(batch, manifest.palette.count)
        d_loss, total, parts = gan_step(state, images, onehot)
        _check_finite(total, f"generator loss at step {state.iteration}", snapshot)
        _check_finite(d_loss, f"discriminator loss at step {state.iteration}", snapshot)
        metrics.write(state.iteration, total, parts["adv"], parts["feat"],
                      parts["percept"], "pretrain")
        if log_losses is not None:
            log_losses.append(total)
        if d_losses is not None:
            d_losses.append(d_loss)
        if state.iteration % 200 == 0:
            log.info("gan step %d: g=%.4f (adv=%.3f feat=%.3f percept=%.3f) d=%.4f",
                     state.iteration, total, parts["adv"], parts["feat"],
                     parts["percept"], d_loss)
        state.iteration += 1
    metrics.close()
    if out_dir is not None:
        save_train_state(Path(out_dir) / "gan.ckpt", state)
    return state


# ---------------------------------------------------------------------------
# Editing-simulation finetuning
# ---------------------------------------------------------------------------

DEGENERATE_FRACTION = 0.99


def perturbed_masks(state: TrainState, labels_t: torch.Tensor, labels_ref: torch.Tensor):
    """Frozen-VAE traversal of a batch: hardened inter/outer label maps."""
    cfg = state.config
    C = state.palette.count
    with torch.no_grad():
        onehot_t = labels_to_onehot_t(labels_t, C)
        onehot_r = labels_to_onehot_t(labels_ref, C)
        z_t, _ = state.vae.encode(onehot_t)
        z_r, _ = state.vae.encode(onehot_r)
        delta = (z_r - z_t) / cfg.lambda_inter
        inter = harden_logits(state.vae.decode(z_t + delta))
        outer = harden_logits(state.vae.decode(z_t - delta))
    return inter, outer


def _degenerate(labels: torch.Tensor) -> torch.Tensor:
    """True per batch item when one category covers > 99% of pixels."""
    flat = labels.flatten(1)
    counts = torch.stack([(flat == c).sum(dim=1) for c in range(int(labels.max()) + 1)], dim=1)
    return counts.max(dim=1).values > DEGENERATE_FRACTION * flat.shape[1]


def ebst_step(state: TrainState, batch: Batch, metrics: Optional[MetricsLog] = None):
    """One stage-I update then one stage-II composite update on a minibatch."""
    if state.vae is None:
        raise ValueError("editing simulation needs a pretrained mask VAE in the state")
    cfg = state.config
    C = state.palette.count
    images, onehot, labels = batch_to_tensors(batch, C)
    if batch.refs is None:
        raise ValueError("editing simulation needs reference masks (with_ref batches)")
    labels_ref = torch.from_numpy(
        np.stack([s.mask.labels for s in batch.refs]).astype(np.int64))

    # Stage I: plain conditional update on the target pair
    for _ in range(cfg.stage_ratio):
        d1, t1, parts1 = gan_step(state, images, onehot)
        if metrics:
            metrics.write(state.iteration, t1, parts1["adv"], parts1["feat"],
                          parts1["percept"], "stage1")

    # Stage II: render two perturbed masks with shared weights, blend, update
    inter, outer = perturbed_masks(state, labels, labels_ref)
    keep = ~(_degenerate(inter) | _degenerate(outer))
    skipped = int((~keep).sum())
    if skipped:
        state.stage2_skipped += skipped
        log.info("stage-II: skipped %d degenerate traversal(s)", skipped)
    stats = {"stage2_ran": False, "skipped": skipped}
    if keep.any():
        images_k, onehot_k = images[keep], onehot[keep]
        onehot_inter = labels_to_onehot_t(inter[keep], C)
        onehot_outer = labels_to_onehot_t(outer[keep], C)
        style = state.dmn.style(images_k, onehot_k)
        render_inter = state.dmn.generate(style, onehot_inter)
        render_outer = state.dmn.generate(style, onehot_outer)
        cond = onehot_k if cfg.stage2_condition == "target" else onehot_inter
        d2, t2, parts2 = gan_step(
            state, images_k, cond, train_blender_on=(render_inter, render_outer))
        if metrics:
            metrics.write(state.iteration, t2, parts2["adv"], parts2["feat"],
                          parts2["percept"], "stage2")
        stats.update({"stage2_ran": True, "d_loss": d2, "g_loss": t2})
    state.iteration += 1
    state.ebst_iteration += 1
    return stats


def run_ebst(config: TrainConfig, state: TrainState, manifest: DatasetManifest,
             out_dir: Optional[Path] = None, iters: Optional[int] = None,
             eval_fn=None) -> TrainState:
    """Alternate editing-simulation steps until the budget or early stop.

    ``eval_fn(state) -> float`` supplies the snapshot metric (style-copy
    reconstruction error); a moving average over ``early_stop_window``
    snapshots that fails to improve ``early_stop_patience`` times stops
    the run early.
    """
    if state.vae is None:
        raise ValueError("run_ebst needs a state carrying the frozen mask VAE")
    vae_before = {k: v.clone() for k, v in state.vae.state_dict().items()}
    state.set_learning_rate(config.lr_ebst)
    budget = iters if iters is not None else config.ebst_iters
    metrics = MetricsLog(Path(out_dir) / "ebst_metrics.csv" if out_dir else None)

    best_avg = math.inf
    misses = 0
    stream = minibatch(manifest, "train", config.batch_size_gan, config.seed + 13,
                       with_ref=True, skip=state.ebst_iteration)
    for _, batch in zip(range(state.ebst_iteration, budget), stream):
        stats = ebst_step(state, batch, metrics)
        if stats.get("stage2_ran"):
            _check_finite(stats["g_loss"], f"stage-II loss at {state.iteration}",
                          lambda: _diverged_snapshot(out_dir, state))
        if eval_fn is not None and state.ebst_iteration % config.snapshot_every == 0:
            score = eval_fn(state)
            state.snapshots.append({"iteration": state.iteration, "metric": score})
            window = [s["metric"] for s in state.snapshots[-config.early_stop_window:]]
            avg = sum(window) / len(window)
            if avg < best_avg - 1e-6:
                best_avg, misses = avg, 0
            else:
                misses += 1
            log.info("ebst snapshot @%d: metric=%.5f window_avg=%.5f misses=%d",
                     state.iteration, score, avg, misses)
            if misses >= config.early_stop_patience and \
                    len(state.snapshots) >= config.early_stop_window:
                log.info("early stop at iteration %d", state.iteration)
                break
    metrics.close()

    vae_after = state.vae.state_dict()
    for k, v in vae_before.items():
        if not torch.equal(v, vae_after[k]):
            raise AssertionError(f"frozen VAE parameter {k} changed during editing simulation")
    if out_dir is not None:
        save_train_state(Path(out_dir) / "ebst.ckpt", state)
    return state


def _diverged_snapshot(out_dir, state):
    path = Path(out_dir or ".") / "ebst_diverged.ckpt"
    save_train_state(path, state)
    return path


# ---------------------------------------------------------------------------
# Quick quality measurements used by trainers and the acceptance suite
# ---------------------------------------------------------------------------


@torch.no_grad()
def reconstruction_mae(state: TrainState, manifest: DatasetManifest, split: str = "test",
                       limit: int = 64) -> float:
    """Mean absolute error of self-reconstruction on a split."""
    state.dmn.eval()
    ids = manifest.ids(split)[:limit]
    total = count = 0.0
    for start in range(0, len(ids), 16):
        chunk = [manifest.load_sample(i) for i in ids[start:start + 16]]
        images, onehot, _ = batch_to_tensors(Batch(chunk), manifest.palette.count)
        out = state.dmn(images, onehot)
        total += (out - images).abs().sum().item()
        count += images.numel()
    state.dmn.train()
    return total / count
