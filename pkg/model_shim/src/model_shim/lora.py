"""Low-rank adapters over frozen linear layers.

The adapter computes base(x) + (alpha / rank) * drop(x) A^T B^T with A
Gaussian-initialized and B zero-initialized, so a freshly applied adapter
is an exact no-op.  Only A and B receive gradients; the wrapped layer is
frozen in place.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .lm import TinyCausalLM

ADAPTER_VERSION = 1

TARGET_PROJECTIONS = ("q_proj", "k_proj", "v_proj", "out_proj")


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 64
    alpha: float = 128.0
    dropout: float = 0.05

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Linear, config: LoraConfig):
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.scaling = config.alpha / config.rank
        self.drop = nn.Dropout(config.dropout)
        self.lora_a = nn.Parameter(torch.empty(config.rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, config.rank))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        delta = self.drop(x) @ self.lora_a.T @ self.lora_b.T
        return self.base(x) + self.scaling * delta


def apply_lora(model: TinyCausalLM, config: LoraConfig) -> list[nn.Parameter]:
    """Wrap every attention projection; freeze everything else.

    Returns the trainable adapter parameters.  Applying twice is an error:
    stacked adapters would silently change the serialized layout.
    """
    trainable: list[nn.Parameter] = []
    for p in model.parameters():
        p.requires_grad_(False)
    for block in model.blocks:
        for name in TARGET_PROJECTIONS:
            layer = getattr(block.attn, name)
            if isinstance(layer, LoRALinear):
                raise ValueError("model already has adapters applied")
            wrapped = LoRALinear(layer, config)
            setattr(block.attn, name, wrapped)
            trainable.extend([wrapped.lora_a, wrapped.lora_b])
    return trainable


def lora_state_dict(model: TinyCausalLM) -> dict[str, torch.Tensor]:
    return {
        k: v for k, v in model.state_dict().items()
        if k.endswith(("lora_a", "lora_b"))
    }


def save_adapter(model: TinyCausalLM, config: LoraConfig, path: str) -> None:
    torch.save(
        {
            "format_version": ADAPTER_VERSION,
            "lora_config": asdict(config),
            "lora_state": lora_state_dict(model),
        },
        path,
    )


def load_adapter(model: TinyCausalLM, path: str) -> LoraConfig:
    """Apply adapters to a bare base model and load their weights."""
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(blob, dict) or blob.get("format_version") != ADAPTER_VERSION:
        raise ValueError(f"adapter {path}: unsupported or missing format_version")
    config = LoraConfig(**blob["lora_config"])
    apply_lora(model, config)
    missing, unexpected = model.load_state_dict(blob["lora_state"], strict=False)
    if unexpected:
        raise ValueError(f"adapter {path}: unexpected tensors {sorted(unexpected)[:3]}")
    still_missing = [k for k in missing if k.endswith(("lora_a", "lora_b"))]
    if still_missing:
        raise ValueError(f"adapter {path}: missing tensors {still_missing[:3]}")
    return config
