"""Completion-only adapter training with a cosine schedule.

Loss contract: for each example, sum the NLL over completion tokens only
(prompt and padding excluded), then average the sums across the batch.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from .data import Example, WhitespaceVocab, load_dataset
from .lora import adapter_parameters, adapter_state, apply_lora
from .modeling import build_base_model

IGNORE = -100


@dataclass(frozen=True)
class TrainConfig:
    dataset: str
    out_dir: str
    base_model: str = "tiny-causal"
    rank: int = 64
    alpha: float = 16.0
    learning_rate: float = 3e-5
    warmup_ratio: float = 0.05
    epochs: int = 6
    batch_size: int = 128
    seed: int = 0
    max_steps: int | None = None   # overrides the epoch count when set

    def __post_init__(self) -> None:
        if self.rank <= 0:
            raise ValueError("rank must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.warmup_ratio < 1:
            raise ValueError("warmup ratio must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be at least 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be at least 1 when set")

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**data)


# ------------------------------------------------------------
# Batching and loss
# ------------------------------------------------------------

def encode_example(example: Example, vocab: WhitespaceVocab) -> tuple[list[int], list[int]]:
    """Token ids and labels. The model predicts position i+1 from prefix
    ..i, so labels align one ahead; prompt predictions are ignored."""
    prompt_ids = [vocab.BOS] + vocab.encode(example.prompt)
    completion_ids = vocab.encode(example.completion)
    ids = prompt_ids + completion_ids
    labels = [IGNORE] * (len(prompt_ids) - 1) + completion_ids + [IGNORE]
    assert len(labels) == len(ids)
    return ids, labels


def collate(
    examples: list[Example], vocab: WhitespaceVocab, device: torch.device
) -> tuple[torch.Tensor, torch.Tensor]:
    encoded = [encode_example(e, vocab) for e in examples]
    width = max(len(ids) for ids, _ in encoded)
    batch_ids = torch.full((len(encoded), width), vocab.PAD, dtype=torch.long)
    batch_labels = torch.full((len(encoded), width), IGNORE, dtype=torch.long)
    for row, (ids, labels) in enumerate(encoded):
        batch_ids[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        batch_labels[row, : len(labels)] = torch.tensor(labels, dtype=torch.long)
    return batch_ids.to(device), batch_labels.to(device)


def batch_loss(
    model: nn.Module, ids: torch.Tensor, labels: torch.Tensor
) -> torch.Tensor:
    """Mean over examples of the per-example completion NLL sum."""
    logits = model(ids)
    per_token = nn.functional.cross_entropy(
        logits.flatten(0, 1), labels.flatten(), ignore_index=IGNORE,
        reduction="none",
    ).view(labels.shape)
    per_example = per_token.sum(dim=1)
    return per_example.mean()


def cosine_schedule(step: int, total_steps: int, warmup_steps: int) -> float:
    """Learning-rate multiplier: linear warmup, then cosine decay to zero."""
    if warmup_steps and step < warmup_steps:
        return (step + 1) / warmup_steps
    if total_steps <= warmup_steps:
        return 1.0
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


# ------------------------------------------------------------
# Training loop
# ------------------------------------------------------------

def _batches(examples: list[Example], batch_size: int, rng: random.Random):
    order = list(range(len(examples)))
    rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        yield [examples[i] for i in order[start : start + batch_size]]


def train(config: TrainConfig) -> dict:
    """Fit adapters; write checkpoint + loss curve; return a run summary."""
    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)
    device = torch.device("cpu")

    examples = load_dataset(config.dataset)
    if not examples:
        raise ValueError(f"dataset {config.dataset} holds no examples")
    vocab = WhitespaceVocab.fit(examples)
    longest = max(
        len(encode_example(e, vocab)[0]) for e in examples
    )

    model = build_base_model(config.base_model, len(vocab), max_seq_len=longest)
    model = apply_lora(model, config.rank, config.alpha)
    model.to(device)
    model.train()

    steps_per_epoch = math.ceil(len(examples) / config.batch_size)
    total_steps = (
        config.max_steps
        if config.max_steps is not None
        else steps_per_epoch * config.epochs
    )
    warmup_steps = int(config.warmup_ratio * total_steps)
    optimizer = torch.optim.AdamW(
        adapter_parameters(model), lr=config.learning_rate
    )

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve: list[tuple[int, float]] = []
    step = 0
    try:
        while step < total_steps:
            for batch in _batches(examples, config.batch_size, rng):
                if step >= total_steps:
                    break
                for group in optimizer.param_groups:
                    group["lr"] = config.learning_rate * cosine_schedule(
                        step, total_steps, warmup_steps
                    )
                optimizer.zero_grad()
                ids, labels = collate(batch, vocab, device)
                loss = batch_loss(model, ids, labels)
                loss.backward()
                optimizer.step()
                curve.append((step, float(loss.detach())))
                step += 1
    except torch.cuda.OutOfMemoryError as exc:  # pragma: no cover
        raise RuntimeError(
            "out of memory during training; reduce batch_size or rank"
        ) from exc

    curve_path = out_dir / "loss_curve.txt"
    curve_path.write_text(
        "".join(f"{s} {value:.6f}\n" for s, value in curve), encoding="utf-8"
    )
    checkpoint_path = out_dir / "adapter.pt"
    torch.save(
        {
            "adapter_state": adapter_state(model),
            "vocab": vocab.to_obj(),
            "config": {
                "base_model": config.base_model,
                "rank": config.rank,
                "alpha": config.alpha,
                "learning_rate": config.learning_rate,
                "warmup_ratio": config.warmup_ratio,
                "epochs": config.epochs,
                "batch_size": config.batch_size,
                "seed": config.seed,
                "max_seq_len": longest,
            },
        },
        checkpoint_path,
    )
    return {
        "steps": step,
        "initial_loss": curve[0][1],
        "final_loss": curve[-1][1],
        "examples": len(examples),
        "vocab_size": len(vocab),
        "checkpoint": str(checkpoint_path),
        "loss_curve": str(curve_path),
    }
