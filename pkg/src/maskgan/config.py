"""Training configuration and its flat key=value file format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .adversarial import GAN_LOSSES
from .dmn import FUSION_MODES
from .vae import KL_CONVENTIONS

STAGE2_CONDITIONS = ("target", "edited")


@dataclass
class TrainConfig:
    """Every knob for pretraining and editing-simulation finetuning.

    Defaults are desk scale: 64 px, eighth-width networks, budgets sized
    for minutes on a CPU. Paper-scale values (resolution 512, width_scale
    1.0, latent_dim 512, batch sizes 16/8) are drop-in.
    """

    resolution: int = 64
    width_scale: float = 0.125
    latent_dim: int = 64
    vae_width: int = 16
    residual_blocks: int = 4
    fusion_mode: str = "sft"
    decoder_norm: str = "none"  # "in" restores the full-scale recipe
    gan_loss: str = "lsgan"
    kl_convention: str = "paper"

    lr_pretrain: float = 2e-4
    lr_ebst: float = 5e-5
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size_vae: int = 16
    batch_size_gan: int = 8

    lambda_kl: float = 1e-5
    lambda_inter: float = 2.5
    lambda_feat: float = 10.0
    lambda_percept: float = 10.0

    vae_iters: int = 3000
    gan_iters: int = 4000
    ebst_iters: int = 600
    stage_ratio: int = 1
    stage2_condition: str = "target"
    snapshot_every: int = 100
    early_stop_window: int = 10
    early_stop_patience: int = 3

    perceptual_weights_path: str = ""
    data_root: str = ""
    seed: int = 0

    def __post_init__(self):
        for name in ("lr_pretrain", "lr_ebst"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.lambda_inter <= 1:
            raise ValueError("lambda_inter must be > 1 (traversal stays a perturbation)")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.decoder_norm not in ("none", "in"):
            raise ValueError("decoder_norm must be 'none' or 'in'")
        if self.gan_loss not in GAN_LOSSES:
            raise ValueError(f"gan_loss must be one of {GAN_LOSSES}")
        if self.kl_convention not in KL_CONVENTIONS:
            raise ValueError(f"kl_convention must be one of {KL_CONVENTIONS}")
        if self.stage2_condition not in STAGE2_CONDITIONS:
            raise ValueError(f"stage2_condition must be one of {STAGE2_CONDITIONS}")
        if self.resolution < 4 or self.resolution & (self.resolution - 1):
            raise ValueError("resolution must be a power of two >= 4")
        for name in ("batch_size_vae", "batch_size_gan", "vae_iters", "gan_iters",
                     "ebst_iters", "stage_ratio", "snapshot_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**values)


def _coerce(raw: str, target_type):
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return target_type(raw)


def load_config(path) -> TrainConfig:
    """Parse a flat key=value file; '#' starts a comment; unknown keys reject."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    type_map = {"int": int, "float": float, "str": str, "bool": bool}
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(raw, type_map[types[key]])
    return TrainConfig.from_dict(values)


def save_config(config: TrainConfig, path) -> None:
    lines = [f"{k} = {v}" for k, v in config.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n")
