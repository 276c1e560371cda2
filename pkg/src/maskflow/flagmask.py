"""Per-action effectiveness flags and mask-sample construction.

Three flagging rules, applied in order over a finished workflow:

  R1  a Code action whose feedback is an execution fault
  R2  any action immediately before a Thought that talks about going back
      (its text contains "however" or "rethink", case-insensitive)
  R3  every rethink-marked Thought itself

An action touched by any rule carries flag 0; everything else, including
the closing Done of an accepted workflow, carries flag 1. Mask samples
then target flagged-1 actions (or the variant's alternative target set),
one sample per target, with the target's slot replaced by a sentinel and
the rest of the workflow left visible.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .model import (
    Action,
    ActionKind,
    DEFAULT_MASK_INSTRUCTION,
    MASK_TOKEN,
    MaskDataset,
    MaskSample,
    MaskVariant,
    NAIVE_SFT_INSTRUCTION,
    Provenance,
    Workflow,
)
from .records import write_mask_dataset
from .simenv import seed_split

RULE_TRACEBACK = "R1"
RULE_KEYWORD = "R2"
RULE_RETHINK = "R3"

_R2_KEYWORDS = ("however", "rethink")


@dataclass(frozen=True)
class FlagReport:
    workflow_id: str
    flags: tuple[int, ...]
    rule_hits: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if len(self.flags) != len(self.rule_hits):
            raise ValueError("flags and rule_hits must align")
        for flag, hits in zip(self.flags, self.rule_hits):
            if flag == 0 and not hits:
                raise ValueError("a 0-flag needs at least one rule hit")
            if flag == 1 and hits:
                raise ValueError("a 1-flag cannot carry rule hits")

    def keyword_hit_indexes(self) -> tuple[int, ...]:
        """1-based indexes of actions R2 fired on."""
        return tuple(
            i + 1 for i, hits in enumerate(self.rule_hits) if RULE_KEYWORD in hits
        )

    def rethink_indexes(self) -> tuple[int, ...]:
        """1-based indexes of actions R3 fired on."""
        return tuple(
            i + 1 for i, hits in enumerate(self.rule_hits) if RULE_RETHINK in hits
        )


def _mentions_reconsidering(thought: Action) -> bool:
    if thought.kind is not ActionKind.THOUGHT:
        return False
    lowered = thought.content.lower()
    return any(keyword in lowered for keyword in _R2_KEYWORDS)


def flag_actions(workflow: Workflow) -> FlagReport:
    actions = workflow.actions
    feedback_by_index = {f.step_index: f for f in workflow.feedbacks}
    hits: list[list[str]] = [[] for _ in actions]
    for i, action in enumerate(actions):
        if (
            action.kind is ActionKind.CODE
            and feedback_by_index[action.index].is_error
        ):
            hits[i].append(RULE_TRACEBACK)
    for i in range(1, len(actions)):
        if _mentions_reconsidering(actions[i]):
            hits[i - 1].append(RULE_KEYWORD)
    for i, action in enumerate(actions):
        if action.is_rethink:
            hits[i].append(RULE_RETHINK)
    flags = tuple(0 if h else 1 for h in hits)
    return FlagReport(
        workflow_id=workflow.task_id,
        flags=flags,
        rule_hits=tuple(tuple(h) for h in hits),
    )


def flagged_workflow(workflow: Workflow, report: FlagReport) -> Workflow:
    """Copy of the workflow with the report's flags attached."""
    if report.workflow_id != workflow.task_id:
        raise ValueError("report belongs to a different workflow")
    return Workflow(
        task_id=workflow.task_id,
        actions=workflow.actions,
        feedbacks=workflow.feedbacks,
        flags=report.flags,
        prediction=workflow.prediction,
        accepted=workflow.accepted,
        generation_mode=workflow.generation_mode,
        abort_reason=workflow.abort_reason,
    )


# ============================================================
# Sample construction
# ============================================================

def _target_indexes(
    workflow: Workflow,
    report: FlagReport,
    variant: MaskVariant,
    rng: random.Random | None,
) -> tuple[int, ...]:
    effective = tuple(
        a.index for a, flag in zip(workflow.actions, report.flags) if flag == 1
    )
    if variant is MaskVariant.INSTRUCT:
        return effective
    if variant is MaskVariant.RANDOM:
        if rng is None:
            raise ValueError("random_masking needs an rng")
        population = range(1, len(workflow.actions) + 1)
        return tuple(sorted(rng.sample(population, len(effective))))
    if variant is MaskVariant.WITH_RETHINK:
        extras = set(report.keyword_hit_indexes()) | set(report.rethink_indexes())
        return tuple(sorted(set(effective) | extras))
    raise ValueError(f"no single-action targets for {variant}")


def build_mask_samples(
    workflow: Workflow,
    report: FlagReport,
    variant: MaskVariant,
    *,
    rng: random.Random | None = None,
    allow_rejected: bool = False,
) -> tuple[MaskSample, ...]:
    if report.workflow_id != workflow.task_id:
        raise ValueError("report belongs to a different workflow")
    if len(report.flags) != len(workflow.actions):
        raise ValueError("report does not cover every action")
    if not workflow.accepted and not allow_rejected:
        raise ValueError(
            f"workflow {workflow.task_id} was rejected; "
            "masking expects accepted workflows"
        )
    steps = workflow.steps()
    reward_bit = 1 if workflow.accepted else 0
    if variant is MaskVariant.NAIVE_SFT:
        return (
            MaskSample(
                task_id=workflow.task_id,
                variant=variant,
                target_index=0,
                prefix=(),
                mask_token="",
                suffix=(),
                instruction=NAIVE_SFT_INSTRUCTION,
                target=None,
                target_steps=steps,
                reward=reward_bit,
                flags=report.flags,
            ),
        )
    samples = []
    for index in _target_indexes(workflow, report, variant, rng):
        position = index - 1
        samples.append(
            MaskSample(
                task_id=workflow.task_id,
                variant=variant,
                target_index=index,
                prefix=steps[:position],
                mask_token=MASK_TOKEN,
                suffix=steps[position + 1:],
                instruction=DEFAULT_MASK_INSTRUCTION,
                target=workflow.actions[position],
                target_steps=None,
                reward=reward_bit,
                flags=report.flags,
            )
        )
    return tuple(samples)


# ============================================================
# Dataset assembly and emission
# ============================================================

def mask_dataset_from_workflows(
    workflows: Sequence[Workflow],
    variant: MaskVariant,
    *,
    seed: int,
    source_digest: str,
    allow_rejected: bool = False,
) -> MaskDataset:
    """Flag every workflow and collect its samples, in workflow order.

    The random variant draws from a per-workflow stream split off the
    seed, so output is independent of processing order.
    """
    samples: list[MaskSample] = []
    for workflow in workflows:
        report = flag_actions(workflow)
        rng = random.Random(seed_split(seed, f"mask:{workflow.task_id}"))
        samples.extend(
            build_mask_samples(
                workflow, report, variant, rng=rng, allow_rejected=allow_rejected
            )
        )
    return MaskDataset(
        samples=tuple(samples),
        provenance=Provenance(
            generator_mode=variant.value, config_digest=source_digest, seed=seed
        ),
    )


def emit_dataset(dataset: MaskDataset, path: str | Path) -> str:
    """Write samples as line-delimited records plus a manifest; returns the
    content digest."""
    return write_mask_dataset(path, dataset)


def conservation_count(workflows: Iterable[Workflow]) -> int:
    """Independent recount of what instruct masking must emit: the number
    of flagged-effective actions across the given workflows."""
    total = 0
    for workflow in workflows:
        total += sum(flag_actions(workflow).flags)
    return total
