"""Tag wire protocol: parsing raw model turns, rendering actions, feedback,
prompts, whole workflows, and training samples.

The grammar is deliberately rigid. Four tags exist: ``<thought>``, ``<code>``
(whose body is a triple-backtick fence), ``<done>`` (empty), and ``<result>``
(environment output, never produced by the model). Anything else is a typed
parse error, not a best-effort guess.
"""

from __future__ import annotations

import re
from typing import Sequence

from .model import (
    Action,
    ActionKind,
    EnvState,
    Feedback,
    GenerationMode,
    MaskSample,
    MaskVariant,
    Step,
    split_rethink,
)

# ============================================================
# Errors
# ============================================================

class ParseError(ValueError):
    """Base for tag-grammar violations. ``span`` holds the offending text."""

    def __init__(self, message: str, span: str) -> None:
        super().__init__(message)
        self.span = span


class NoTagError(ParseError):
    pass


class MultipleTagsError(ParseError):
    pass


class MalformedCodeError(ParseError):
    pass


# ============================================================
# Action parsing
# ============================================================

_ACTION_TAG_RE = re.compile(r"<(thought|code|done)>(.*?)</\1>", re.DOTALL)
_BLOCK_TAG_RE = re.compile(r"<(thought|code|done|result)>(.*?)</\1>", re.DOTALL)
# Opening fence may carry a language word; the fence body starts after its
# newline. The closing fence is the next triple backtick.
_FENCE_RE = re.compile(r"```[a-zA-Z0-9_+-]*\n(.*?)```", re.DOTALL)

_KIND_BY_TAG = {
    "thought": ActionKind.THOUGHT,
    "code": ActionKind.CODE,
    "done": ActionKind.DONE,
}


def _code_content(interior: str) -> str:
    fence = _FENCE_RE.search(interior)
    if fence is None:
        raise MalformedCodeError("code tag without a complete backtick fence", interior)
    body = fence.group(1)
    # The canonical form puts the closing fence on its own line; give that
    # newline back to the fence rather than the program text.
    if body.endswith("\n"):
        body = body[:-1]
    return body


def parse_action(raw: str, *, index: int = 1) -> Action:
    """Map one raw model turn to an Action or raise a typed ParseError.

    Unknown tags are not guessed at: a turn whose only tag-like content is
    unrecognized comes back as NoTagError. Prose around a single recognized
    tag is ignored.
    """
    matches = list(_ACTION_TAG_RE.finditer(raw))
    if not matches:
        raise NoTagError("no recognized action tag", raw.strip())
    if len(matches) > 1:
        raise MultipleTagsError(
            f"{len(matches)} top-level action tags in one turn", matches[1].group(0)
        )
    tag, interior = matches[0].group(1), matches[0].group(2)
    kind = _KIND_BY_TAG[tag]
    if kind is ActionKind.DONE:
        return Action(index=index, kind=kind, content="")
    if kind is ActionKind.CODE:
        return Action(index=index, kind=kind, content=_code_content(interior))
    is_rethink = split_rethink(interior) is not None
    return Action(index=index, kind=kind, content=interior, is_rethink=is_rethink)


# ============================================================
# Rendering
# ============================================================

def render_action(action: Action) -> str:
    if action.kind is ActionKind.DONE:
        return "<done></done>"
    if action.kind is ActionKind.CODE:
        return f"<code>```\n{action.content}\n```</code>"
    return f"<thought>{action.content}</thought>"


# Feedback payloads are escaped so a payload can never close its own tag.
_ESCAPES = (("&", "&amp;"), ("</result>", "&lt;/result&gt;"))


def escape_payload(payload: str) -> str:
    for plain, entity in _ESCAPES:
        payload = payload.replace(plain, entity)
    return payload


def unescape_payload(escaped: str) -> str:
    for plain, entity in reversed(_ESCAPES):
        escaped = escaped.replace(entity, plain)
    return escaped


def render_feedback(feedback: Feedback) -> str:
    return f"<result>{escape_payload(feedback.payload)}</result>"


def render_step(step: Step) -> str:
    action, feedback = step
    if feedback is None:
        return render_action(action)
    return render_action(action) + "\n" + render_feedback(feedback)


def render_steps(steps: Sequence[Step]) -> str:
    return "\n".join(render_step(s) for s in steps)


def render_history(history: Sequence[Step]) -> str:
    """Serialized episode history. Append-only: rendering a longer history
    keeps the shorter rendering as an exact prefix."""
    return render_steps(history)


def render_workflow_steps(steps: Sequence[Step]) -> str:
    return render_steps(steps)


def parse_workflow_text(text: str) -> tuple[tuple[Action, ...], tuple[Feedback, ...]]:
    """Inverse of render_steps over canonical workflow text.

    Result blocks bind to the Code action immediately before them; anything
    between blocks other than whitespace is rejected.
    """
    actions: list[Action] = []
    feedbacks: list[Feedback] = []
    cursor = 0
    last_code_unanswered = False
    for match in _BLOCK_TAG_RE.finditer(text):
        gap = text[cursor:match.start()]
        if gap.strip():
            raise ParseError("unexpected text between blocks", gap.strip())
        cursor = match.end()
        tag, interior = match.group(1), match.group(2)
        if tag == "result":
            if not last_code_unanswered:
                raise ParseError("result block without a preceding Code action", match.group(0))
            feedbacks.append(
                Feedback.from_payload(actions[-1].index, unescape_payload(interior))
            )
            last_code_unanswered = False
            continue
        action = parse_action(match.group(0), index=len(actions) + 1)
        if last_code_unanswered:
            raise ParseError("Code action missing its result block", render_action(actions[-1]))
        actions.append(action)
        last_code_unanswered = action.kind is ActionKind.CODE
    tail = text[cursor:]
    if tail.strip():
        raise ParseError("unexpected trailing text", tail.strip())
    if last_code_unanswered:
        raise ParseError("Code action missing its result block", render_action(actions[-1]))
    return tuple(actions), tuple(feedbacks)


# ============================================================
# Prompt assembly
# ============================================================

ANSWER_LINE_PREFIX = "GROUND-TRUTH ANSWER:"

PROMPT_RULES = """You solve questions about a scene by taking one action per turn.
Follow these rules exactly.
1. To run code, emit a <code> tag containing a triple-backtick block.
2. To reason in text, emit a <thought> tag, e.g. <thought>The count looks right.</thought>
3. To finish, emit <done></done> with nothing between the tags.
4. Execution output arrives wrapped in a <result> tag.
5. The scene is already loaded; call the documented tools directly.
6. Store your final answer in a variable named final_answer.
7. If you are missing information, run code that queries the scene for it.
8. Emit exactly one action per turn.
9. Work incrementally and keep each code block small.
10. Put a single word or short phrase in final_answer, then emit <done></done>.
11. Always commit to an answer; never refuse.
12. If final_answer holds True or False, convert it with bool_to_yesno first."""

HISTORY_HEADER = "Steps so far:"
PROMPT_TAIL = "Respond with exactly one action."


def _answer_line(answer: str) -> str:
    return (
        f"{ANSWER_LINE_PREFIX} {answer} "
        "(verify each result against this expected answer and call out any discrepancy)"
    )


def render_prompt(
    env: EnvState,
    history: Sequence[Step],
    mode: GenerationMode,
    shots: Sequence[str] = (),
) -> str:
    """Assemble the full turn prompt.

    The ground-truth answer line appears exactly once in discrepancy-aware
    mode and never otherwise. History must be index-consecutive from 1.
    """
    indexes = [a.index for a, _ in history]
    if indexes != list(range(1, len(history) + 1)):
        raise ValueError("history indexes must be consecutive from 1")
    parts = [PROMPT_RULES, "", "Available tools:", env.tool_docs, ""]
    for shot in shots:
        parts.extend([shot, ""])
    if mode is GenerationMode.DISCREPANCY_AWARE:
        parts.extend([_answer_line(env.task.answer), ""])
    parts.extend([f"Question: {env.task.query}", ""])
    parts.append(HISTORY_HEADER)
    parts.append(render_history(history))
    parts.extend(["", PROMPT_TAIL])
    return "\n".join(parts)


def extract_history_section(prompt: str) -> str:
    """The slice of a rendered prompt holding the serialized history."""
    start = prompt.index(HISTORY_HEADER) + len(HISTORY_HEADER) + 1
    end = prompt.rindex("\n\n" + PROMPT_TAIL)
    return prompt[start:end]


# ============================================================
# Training-sample rendering
# ============================================================

def render_sample_prompt(sample: MaskSample) -> str:
    """Context the trainee conditions on: prefix steps, the mask sentinel in
    place of the hidden action, suffix steps, then the instruction."""
    parts: list[str] = []
    if sample.prefix:
        parts.append(render_steps(sample.prefix))
    if sample.mask_token:
        parts.append(sample.mask_token)
    if sample.suffix:
        parts.append(render_steps(sample.suffix))
    parts.append(sample.instruction)
    return "\n".join(parts)


def render_sample_target(sample: MaskSample) -> str:
    """Completion the trainee must produce."""
    if sample.variant is MaskVariant.NAIVE_SFT:
        assert sample.target_steps is not None
        return render_steps(sample.target_steps)
    assert sample.target is not None
    return render_action(sample.target)
