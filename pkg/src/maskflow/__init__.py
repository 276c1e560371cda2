"""Workflow collection, effectiveness flagging, and instruct-masking datasets
for tool-using agents in a simulated scene environment."""

from .model import (
    Action,
    ActionKind,
    Feedback,
    GenerationMode,
    MaskSample,
    MaskVariant,
    Task,
    Workflow,
    normalize_answer,
    reward,
)

__all__ = [
    "Action",
    "ActionKind",
    "Feedback",
    "GenerationMode",
    "MaskSample",
    "MaskVariant",
    "Task",
    "Workflow",
    "normalize_answer",
    "reward",
]

__version__ = "0.1.0"
