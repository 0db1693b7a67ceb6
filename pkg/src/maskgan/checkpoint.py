"""Named-tensor checkpoint container.

A checkpoint is a single file holding a format version, an echo of the
training config, the iteration counter, a flat name -> tensor map (module
state dicts mounted under prefixes), and an opaque extras dict for
optimizer/RNG state. Loading restores bit-identical forward behavior.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import torch

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    iteration: int
    tensors: Dict[str, torch.Tensor]
    extras: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def namespace(self, prefix: str) -> Dict[str, torch.Tensor]:
        """Tensors under ``prefix.`` with the prefix stripped."""
        head = prefix + "."
        return {k[len(head):]: v for k, v in self.tensors.items() if k.startswith(head)}


def mount(tensors: Dict[str, torch.Tensor], prefix: str, state_dict: dict) -> None:
    for key, value in state_dict.items():
        tensors[f"{prefix}.{key}"] = value


def save_checkpoint(path, config: dict, iteration: int,
                    tensors: Dict[str, torch.Tensor], extras: Optional[dict] = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "version": FORMAT_VERSION,
            "config": config,
            "iteration": iteration,
            "tensors": tensors,
            "extras": extras or {},
        },
        path,
    )


def load_checkpoint(path) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r} in {path}")
    return Checkpoint(
        config=payload["config"],
        iteration=payload["iteration"],
        tensors=payload["tensors"],
        extras=payload["extras"],
        version=version,
    )
