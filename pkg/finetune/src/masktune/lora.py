"""Low-rank adapters: y = W x + (alpha / r) * B A x with W frozen."""

from __future__ import annotations

from typing import Iterator

import torch
from torch import nn


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: float) -> None:
        super().__init__()
        if rank < 1:
            raise ValueError("rank must be positive")
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.base = base
        for parameter in self.base.parameters():
            parameter.requires_grad_(False)
        self.rank = rank
        self.alpha = alpha
        self.scaling = alpha / rank
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        # B starts at zero so the wrapped layer is exactly the base layer
        # until training moves it
        nn.init.normal_(self.lora_a, std=0.02)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + (x @ self.lora_a.T @ self.lora_b.T) * self.scaling


ADAPTED_LAYERS = ("q_proj", "k_proj", "v_proj", "o_proj", "lm_head")


def apply_lora(model: nn.Module, rank: int, alpha: float) -> nn.Module:
    """Freeze the whole model, then wrap every attention projection and the
    output head in adapters. Only adapter weights remain trainable."""
    for parameter in model.parameters():
        parameter.requires_grad_(False)
    for module in model.modules():
        for name in ADAPTED_LAYERS:
            child = getattr(module, name, None)
            if isinstance(child, nn.Linear):
                setattr(module, name, LoRALinear(child, rank, alpha))
    return model


def adapter_parameters(model: nn.Module) -> Iterator[nn.Parameter]:
    for parameter in model.parameters():
        if parameter.requires_grad:
            yield parameter


def adapter_state(model: nn.Module) -> dict[str, torch.Tensor]:
    return {
        name: tensor
        for name, tensor in model.state_dict().items()
        if "lora_a" in name or "lora_b" in name
    }
