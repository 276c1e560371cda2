"""The multi-turn episode loop and batch collection.

One episode: render the prompt for the current turn, draw a raw turn from
the policy, parse it into an Action, execute Code through the tool DSL,
and append the feedback. In discrepancy-aware mode every Code turn is
checked against the session's ground truth; a hit injects a Rethink
thought that consumes the next turn index, so the retry lands two turns
after the flagged action. Episodes end on Done or on the turn cap.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .dsl import builtin_docs, evaluate, render_value
from .model import (
    Action,
    ActionKind,
    EnvState,
    Feedback,
    GenerationMode,
    Provenance,
    Step,
    Task,
    Workflow,
    WorkflowDataset,
    normalize_answer,
    split_rethink,
)
from .policies import BackendError, BackendUnavailable, PolicyBackend, ScriptExhausted
from .protocol import ParseError, parse_action, render_prompt
from .records import config_digest
from .simenv import (
    Environment,
    ToolResult,
    ToolSession,
    environment_config_to_dict,
    noise_model_to_dict,
)


@dataclass(frozen=True)
class EpisodeLimits:
    max_turns: int = 10
    max_rethinks: int = 3       # caps engine-injected rethinks only

    def __post_init__(self) -> None:
        if self.max_turns < 1:
            raise ValueError("max_turns must be at least 1")
        if self.max_rethinks < 0:
            raise ValueError("max_rethinks must be non-negative")


class DetectorKind(str, Enum):
    SIM_ORACLE = "sim_oracle"
    MARKER_PARSE = "marker_parse"


@dataclass(frozen=True)
class DiscrepancyDetector:
    kind: DetectorKind = DetectorKind.SIM_ORACLE


def detect_discrepancy(
    feedback: Feedback | None,
    task: Task,
    actions: Sequence[Action],
    detector: DiscrepancyDetector,
    *,
    trace: Sequence[ToolResult] = (),
    bindings: Mapping[str, object] | None = None,
) -> str | None:
    """Describe what went wrong with the latest step, or None if nothing did.

    sim_oracle compares the step against session ground truth: execution
    faults, tool results that silently deviated from the scene, and a
    final_answer that misses the expected answer all count. marker_parse
    trusts the policy: it reads the description out of a rethink-marked
    thought the backend itself emitted.
    """
    if detector.kind is DetectorKind.MARKER_PARSE:
        if actions and actions[-1].is_rethink:
            description, _ = split_rethink(actions[-1].content)
            return description
        return None
    if feedback is not None and feedback.is_error:
        fault_line = feedback.payload.splitlines()[-1]
        return f"the code raised an execution fault ({fault_line})"
    for result in trace:
        if result.corrupted:
            return (
                f"{result.tool} reported {render_value(result.value)}, "
                "which contradicts the scene"
            )
    if bindings is not None and "final_answer" in bindings:
        predicted = normalize_answer(render_value(bindings["final_answer"]))
        if predicted != task.answer:
            return (
                f"final_answer {predicted!r} does not match the expected "
                f"answer {task.answer!r}"
            )
    return None


def synthesize_rethink(step_index: int, description: str) -> str:
    """Text for an engine-authored rethink thought about the given step.

    The step number keeps the text unique within an episode even when the
    same fault strikes twice.
    """
    return (
        f"Discrepancy: However, step {step_index} looks unreliable: "
        f"{description}. I should rethink this step instead of keeping "
        "its result.\n"
        f"Next: Retry step {step_index} through a different route before "
        "answering."
    )


def _draw_action(policy, prompt: str, index: int) -> tuple[Action | None, str | None]:
    """One policy draw with a single silent re-draw on unparseable output."""
    last: ParseError | None = None
    for _ in range(2):
        try:
            raw = policy.next_turn(prompt)
        except ScriptExhausted as exc:
            return None, f"script_exhausted: {exc}"
        except BackendUnavailable as exc:
            return None, f"backend_unavailable: {exc}"
        except BackendError as exc:
            return None, f"backend_error: {exc}"
        try:
            return parse_action(raw, index=index), None
        except ParseError as exc:
            last = exc
    return None, f"parse_failure: {last}"


def run_episode(
    task: Task,
    backend: PolicyBackend,
    session: ToolSession,
    mode: GenerationMode,
    limits: EpisodeLimits = EpisodeLimits(),
    detector: DiscrepancyDetector | None = None,
    *,
    shots: Sequence[str] = (),
) -> Workflow:
    if detector is None:
        detector = DiscrepancyDetector()
    env = EnvState(task=task, tool_docs=builtin_docs(session.library))
    policy = backend.bind(task)
    steps: list[Step] = []
    actions: list[Action] = []
    feedbacks: list[Feedback] = []
    bindings: dict[str, object] = {}
    rethinks = 0
    abort_reason: str | None = None
    prediction: str | None = None

    t = 1
    while t <= limits.max_turns:
        prompt = render_prompt(env, steps, mode, shots)
        action, abort_reason = _draw_action(policy, prompt, t)
        if action is None:
            break
        actions.append(action)
        feedback: Feedback | None = None
        step_trace: Sequence[ToolResult] = ()
        if action.kind is ActionKind.CODE:
            before = len(session.trace)
            feedback = evaluate(action.content, bindings, session, step_index=t)
            feedbacks.append(feedback)
            env.append_feedback(feedback)
            step_trace = session.trace[before:]
        steps.append((action, feedback))
        if action.kind is ActionKind.DONE:
            if "final_answer" in bindings:
                prediction = render_value(bindings["final_answer"])
            break
        if mode is GenerationMode.SINGLE_TURN:
            done = Action(index=t + 1, kind=ActionKind.DONE, content="")
            actions.append(done)
            steps.append((done, None))
            if "final_answer" in bindings:
                prediction = render_value(bindings["final_answer"])
            break
        if mode is GenerationMode.DISCREPANCY_AWARE:
            if detector.kind is DetectorKind.SIM_ORACLE:
                if action.kind is ActionKind.CODE:
                    description = detect_discrepancy(
                        feedback, task, actions, detector,
                        trace=step_trace, bindings=bindings,
                    )
                    if (
                        description is not None
                        and rethinks < limits.max_rethinks
                        and t < limits.max_turns
                    ):
                        t += 1
                        rethink = Action(
                            index=t,
                            kind=ActionKind.THOUGHT,
                            content=synthesize_rethink(action.index, description),
                            is_rethink=True,
                        )
                        actions.append(rethink)
                        steps.append((rethink, None))
                        rethinks += 1
            elif action.is_rethink:
                rethinks += 1
        t += 1

    ends_done = bool(actions) and actions[-1].kind is ActionKind.DONE
    accepted = (
        ends_done
        and prediction is not None
        and normalize_answer(prediction) == task.answer
    )
    return Workflow(
        task_id=task.task_id,
        actions=tuple(actions),
        feedbacks=tuple(feedbacks),
        flags=None,
        prediction=prediction,
        accepted=accepted,
        generation_mode=mode,
        abort_reason=abort_reason,
    )


# ============================================================
# Batch collection
# ============================================================

@dataclass(frozen=True)
class CollectionStats:
    mode: GenerationMode
    attempts: int
    accepted: int
    aborted: int
    rethink_thoughts: int        # across all attempted workflows
    code_actions_accepted: int   # Code actions inside accepted workflows
    tool_invocations: int        # tool calls across all attempts


def data_utilization(stats: CollectionStats) -> float:
    """Fraction of attempted episodes whose workflow entered the dataset."""
    if stats.attempts == 0:
        raise ValueError("utilization is undefined for zero attempts")
    return stats.accepted / stats.attempts


def tool_use_stats(dataset: WorkflowDataset) -> float:
    """Mean Code-action count over the dataset's workflows."""
    if not dataset.workflows:
        raise ValueError("tool-use average is undefined for an empty dataset")
    total = sum(w.code_action_count() for w in dataset.workflows)
    return total / len(dataset.workflows)


def collection_provenance(
    env: Environment,
    backend: PolicyBackend,
    mode: GenerationMode,
    limits: EpisodeLimits,
    detector: DiscrepancyDetector,
    global_seed: int,
) -> Provenance:
    digest = config_digest(
        {
            "environment": environment_config_to_dict(env.config),
            "noise": noise_model_to_dict(env.noise),
            "library": sorted(env.library),
            "backend": backend.kind,
            "limits": {
                "max_turns": limits.max_turns,
                "max_rethinks": limits.max_rethinks,
            },
            "detector": detector.kind.value,
        }
    )
    return Provenance(
        generator_mode=mode.value, config_digest=digest, seed=global_seed
    )


def collect_dataset(
    tasks: Sequence[Task],
    backend: PolicyBackend,
    env: Environment,
    mode: GenerationMode,
    *,
    global_seed: int,
    limits: EpisodeLimits = EpisodeLimits(),
    detector: DiscrepancyDetector | None = None,
    jobs: int = 1,
) -> tuple[WorkflowDataset, tuple[Workflow, ...], CollectionStats]:
    """Run one episode per task; accepted workflows form the dataset.

    Episodes share nothing (each gets its own session seeded from the task
    id), so results are identical whether they run serially or on a pool.
    """
    if not tasks:
        raise ValueError("collect_dataset needs at least one task")
    if detector is None:
        detector = DiscrepancyDetector()

    def one(task: Task) -> tuple[Workflow, int]:
        session = env.session_for(task, global_seed)
        workflow = run_episode(task, backend, session, mode, limits, detector)
        return workflow, len(session.trace)

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, tasks))
    else:
        outcomes = [one(task) for task in tasks]

    accepted = tuple(w for w, _ in outcomes if w.accepted)
    rejected = tuple(w for w, _ in outcomes if not w.accepted)
    stats = CollectionStats(
        mode=mode,
        attempts=len(outcomes),
        accepted=len(accepted),
        aborted=sum(1 for w, _ in outcomes if w.abort_reason is not None),
        rethink_thoughts=sum(
            1 for w, _ in outcomes for a in w.actions if a.is_rethink
        ),
        code_actions_accepted=sum(w.code_action_count() for w in accepted),
        tool_invocations=sum(calls for _, calls in outcomes),
    )
    dataset = WorkflowDataset(
        workflows=accepted,
        provenance=collection_provenance(
            env, backend, mode, limits, detector, global_seed
        ),
    )
    return dataset, rejected, stats
