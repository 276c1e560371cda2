"""Fine-tunes a tiny causal LM with low-rank adapters on masked-workflow
sample files (schema dwim/v1)."""

from .data import DatasetError, Example, WhitespaceVocab, load_dataset
from .lora import LoRALinear, adapter_parameters, apply_lora
from .modeling import ModelConfig, TinyCausalLM, build_base_model
from .training import TrainConfig, batch_loss, train

__all__ = [
    "DatasetError",
    "Example",
    "WhitespaceVocab",
    "load_dataset",
    "LoRALinear",
    "adapter_parameters",
    "apply_lora",
    "ModelConfig",
    "TinyCausalLM",
    "build_base_model",
    "TrainConfig",
    "batch_loss",
    "train",
]
