"""Core domain types for workflow collection and mask-sample construction.

Everything downstream (protocol rendering, the episode engine, flagging,
dataset emission) builds on the frozen types in this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

# ============================================================
# Wire constants
# ============================================================

SCHEMA_VERSION = "dwim/v1"

# Exact prefix an execution fault payload must carry.
TRACEBACK_SENTINEL = "Traceback (most recent call last):"

# Sentinel that replaces a masked action when a sample is rendered.
MASK_TOKEN = "<MASK_ACTION/>"

DEFAULT_MASK_INSTRUCTION = (
    "Regenerate the masked step exactly; do not proceed to the next step."
)
NAIVE_SFT_INSTRUCTION = "reproduce the full workflow"

# Rethink thoughts carry both markers, each followed by non-empty text.
RETHINK_DISCREPANCY_MARKER = "Discrepancy:"
RETHINK_NEXT_MARKER = "Next:"


# ============================================================
# Enums
# ============================================================

class ActionKind(str, Enum):
    THOUGHT = "Thought"
    CODE = "Code"
    DONE = "Done"


class GenerationMode(str, Enum):
    STANDARD = "standard"
    DISCREPANCY_AWARE = "discrepancy_aware"
    SINGLE_TURN = "single_turn"


class MaskVariant(str, Enum):
    INSTRUCT = "instruct_masking"
    RANDOM = "random_masking"
    WITH_RETHINK = "masking_w_rethink"
    NAIVE_SFT = "naive_sft"


# ============================================================
# Answer normalization
# ============================================================

def normalize_answer(raw: str) -> str:
    """Canonical answer form: lowercase, collapsed whitespace, no trailing
    sentence punctuation. Idempotent by construction."""
    text = " ".join(raw.lower().split())
    return text.rstrip(".!?").rstrip()


def split_rethink(content: str) -> tuple[str, str] | None:
    """Extract (description, suggestion) from rethink-marked thought text.

    Returns None unless the content carries a ``Discrepancy:`` segment
    followed by a ``Next:`` segment, both non-empty.
    """
    d = content.find(RETHINK_DISCREPANCY_MARKER)
    if d < 0:
        return None
    n = content.find(RETHINK_NEXT_MARKER, d + len(RETHINK_DISCREPANCY_MARKER))
    if n < 0:
        return None
    description = content[d + len(RETHINK_DISCREPANCY_MARKER):n].strip()
    suggestion = content[n + len(RETHINK_NEXT_MARKER):].strip()
    if not description or not suggestion:
        return None
    return description, suggestion


# ============================================================
# Episode primitives
# ============================================================

@dataclass(frozen=True)
class Task:
    task_id: str
    scene_ref: str      # opaque pointer into the environment's scene store
    query: str
    answer: str         # already in normalized form

    def __post_init__(self) -> None:
        if not self.task_id:
            raise ValueError("task_id must be non-empty")
        if normalize_answer(self.answer) != self.answer:
            raise ValueError(
                f"task {self.task_id}: answer {self.answer!r} is not normalized"
            )


@dataclass(frozen=True)
class Action:
    index: int          # 1-based position within the episode
    kind: ActionKind
    content: str
    is_rethink: bool = False

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("action index is 1-based")
        if self.kind is ActionKind.DONE and self.content:
            raise ValueError("Done actions carry no content")
        if self.is_rethink:
            if self.kind is not ActionKind.THOUGHT:
                raise ValueError("only Thought actions can be rethinks")
            if split_rethink(self.content) is None:
                raise ValueError(
                    "rethink thoughts need non-empty Discrepancy/Next segments"
                )


@dataclass(frozen=True)
class Feedback:
    step_index: int     # index of the Code action this feedback answers
    payload: str
    is_error: bool

    def __post_init__(self) -> None:
        if self.is_error != self.payload.startswith(TRACEBACK_SENTINEL):
            raise ValueError("is_error must mirror the Traceback sentinel")

    @classmethod
    def from_payload(cls, step_index: int, payload: str) -> "Feedback":
        return cls(step_index, payload, payload.startswith(TRACEBACK_SENTINEL))


# One episode slot: an action plus its feedback (Code only, else None).
Step = tuple[Action, "Feedback | None"]


@dataclass
class EnvState:
    """Mutable episode context: fixed initial fields plus an append-only
    feedback log. Owned by a single episode runner, never shared."""

    task: Task
    tool_docs: str
    _feedback_log: list[Feedback] = field(default_factory=list)

    @property
    def feedback_log(self) -> tuple[Feedback, ...]:
        return tuple(self._feedback_log)

    def append_feedback(self, feedback: Feedback) -> None:
        self._feedback_log.append(feedback)


# ============================================================
# Workflow
# ============================================================

@dataclass(frozen=True)
class Workflow:
    task_id: str
    actions: tuple[Action, ...]
    feedbacks: tuple[Feedback, ...]
    flags: tuple[int, ...] | None
    prediction: str | None
    accepted: bool
    generation_mode: GenerationMode
    abort_reason: str | None = None

    def __post_init__(self) -> None:
        indexes = [a.index for a in self.actions]
        if indexes != list(range(1, len(self.actions) + 1)):
            raise ValueError("action indexes must run 1..n without gaps")
        done_positions = [
            i for i, a in enumerate(self.actions) if a.kind is ActionKind.DONE
        ]
        if done_positions and done_positions != [len(self.actions) - 1]:
            raise ValueError("at most one Done action, and only in last position")
        code_indexes = [a.index for a in self.actions if a.kind is ActionKind.CODE]
        if [f.step_index for f in self.feedbacks] != code_indexes:
            raise ValueError("exactly one feedback per Code action, in order")
        if self.flags is not None and len(self.flags) != len(self.actions):
            raise ValueError("flags must align one-to-one with actions")
        if self.flags is not None and any(f not in (0, 1) for f in self.flags):
            raise ValueError("flags are 0/1")
        if self.accepted and (
            not self.actions or self.actions[-1].kind is not ActionKind.DONE
        ):
            raise ValueError("accepted workflows end with Done")

    def steps(self) -> tuple[Step, ...]:
        """Pair each action with its feedback (None for Thought and Done)."""
        by_index = {f.step_index: f for f in self.feedbacks}
        return tuple((a, by_index.get(a.index)) for a in self.actions)

    def code_action_count(self) -> int:
        return sum(1 for a in self.actions if a.kind is ActionKind.CODE)


def reward(workflow: Workflow, task: Task) -> int:
    """Binary acceptance reward, recomputed from first principles.

    Raises ValueError on task mismatch or when the stored accepted bit
    disagrees with the recomputation (an invariant breach upstream).
    """
    if workflow.task_id != task.task_id:
        raise ValueError(
            f"workflow belongs to {workflow.task_id!r}, not {task.task_id!r}"
        )
    ends_done = bool(workflow.actions) and (
        workflow.actions[-1].kind is ActionKind.DONE
    )
    matches = workflow.prediction is not None and (
        normalize_answer(workflow.prediction) == normalize_answer(task.answer)
    )
    value = 1 if (ends_done and matches) else 0
    if bool(value) != workflow.accepted:
        raise ValueError(
            f"workflow {workflow.task_id}: accepted={workflow.accepted} "
            f"disagrees with recomputed reward {value}"
        )
    return value


# ============================================================
# Mask samples
# ============================================================

@dataclass(frozen=True)
class MaskSample:
    task_id: str
    variant: MaskVariant
    target_index: int                     # 0 for naive_sft (nothing masked)
    prefix: tuple[Step, ...]
    mask_token: str                       # "" for naive_sft
    suffix: tuple[Step, ...]
    instruction: str
    target: Action | None                 # None only for naive_sft
    target_steps: tuple[Step, ...] | None  # naive_sft: the whole workflow
    reward: int
    flags: tuple[int, ...]                # flags of the source workflow

    def __post_init__(self) -> None:
        if self.reward not in (0, 1):
            raise ValueError("reward is 0/1")
        if self.variant is MaskVariant.NAIVE_SFT:
            if self.target is not None or self.target_steps is None:
                raise ValueError("naive_sft samples target the whole workflow")
            if self.mask_token or self.prefix or self.suffix:
                raise ValueError("naive_sft samples carry no mask or context")
        else:
            if self.target is None or self.target_steps is not None:
                raise ValueError("masking samples target a single action")
            if self.target.index != self.target_index:
                raise ValueError("target_index must match the target action")
            if not self.mask_token:
                raise ValueError("masking samples need a mask sentinel")


@dataclass(frozen=True)
class Provenance:
    generator_mode: str     # e.g. a GenerationMode or MaskVariant value
    config_digest: str      # hex digest of the environment/run config
    seed: int


@dataclass(frozen=True)
class WorkflowDataset:
    workflows: tuple[Workflow, ...]
    provenance: Provenance

    def __post_init__(self) -> None:
        bad = [w.task_id for w in self.workflows if not w.accepted]
        if bad:
            raise ValueError(f"collection datasets hold accepted workflows only: {bad[:3]}")


@dataclass(frozen=True)
class MaskDataset:
    samples: tuple[MaskSample, ...]
    provenance: Provenance


def iter_actions(workflows: Iterable[Workflow]) -> Iterable[Action]:
    for w in workflows:
        yield from w.actions
