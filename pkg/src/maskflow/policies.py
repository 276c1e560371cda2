"""Policy backends: scripted branch tables and an OpenAI-compatible HTTP client.

A backend is bound to a task once and then queried one prompt at a time.
Scripted backends dispatch on a cue derived from the prompt's history
section; HTTP backends forward the whole prompt to a chat-completions
endpoint. Both failure modes (exhausted script, unreachable server) are
surfaced as typed errors the episode engine converts into aborted,
non-accepted workflows.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import requests

from .model import ActionKind, Task
from .protocol import extract_history_section, parse_workflow_text
from .simenv import DEFAULT_COLORS, TaskKind, parse_query


class BackendError(RuntimeError):
    """Base class for policy-side failures the engine must absorb."""


class ScriptExhausted(BackendError):
    """A scripted policy has no turn left for the current cue."""


class BackendUnavailable(BackendError):
    """The backend cannot produce a turn (network failure, bad response)."""


class EpisodePolicy(Protocol):
    def next_turn(self, prompt: str) -> str: ...


class PolicyBackend(Protocol):
    kind: str

    def bind(self, task: Task) -> EpisodePolicy: ...


# ============================================================
# Cue derivation
# ============================================================

RESULT_CUE = "RESULT: "
RETHINK_CUE = "RETHINK: "
THOUGHT_CUE = "THOUGHT: "


def derive_cue(prompt: str) -> str:
    """Reduce a prompt to the single piece of state a script branches on.

    Empty string for a fresh episode; otherwise a prefixed view of the most
    recent history block: the last tool result, the rethink thought just
    injected, or a plain thought.
    """
    history = extract_history_section(prompt)
    if not history.strip():
        return ""
    actions, feedbacks = parse_workflow_text(history)
    if not actions:
        return ""
    last = actions[-1]
    if last.kind is ActionKind.CODE:
        return RESULT_CUE + feedbacks[-1].payload
    if last.is_rethink:
        return RETHINK_CUE + last.content
    return THOUGHT_CUE + last.content


# ============================================================
# Scripted backend
# ============================================================

def code_turn(source: str) -> str:
    return f"<code>```\n{source}\n```</code>"


def thought_turn(text: str) -> str:
    return f"<thought>{text}</thought>"


DONE_TURN = "<done></done>"


@dataclass(frozen=True)
class ScriptBranch:
    """One (cue pattern, turn sequence) entry. Repeated hits on the same
    branch walk its turn list; walking past the end is a script fault."""

    pattern: str
    turns: tuple[str, ...]
    regex: re.Pattern[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.turns:
            raise ValueError("a branch needs at least one turn")
        object.__setattr__(self, "regex", re.compile(self.pattern))


class _ScriptedEpisode:
    def __init__(self, branches: Sequence[ScriptBranch]) -> None:
        self._branches = tuple(branches)
        self._cursors = [0] * len(self._branches)

    def next_turn(self, prompt: str) -> str:
        cue = derive_cue(prompt)
        for slot, branch in enumerate(self._branches):
            if branch.regex.search(cue) is None:
                continue
            cursor = self._cursors[slot]
            if cursor >= len(branch.turns):
                raise ScriptExhausted(
                    f"branch {branch.pattern!r} used up its {cursor} turns"
                )
            self._cursors[slot] = cursor + 1
            return branch.turns[cursor]
        raise ScriptExhausted(f"no branch matches cue {cue[:80]!r}")


class ScriptedBackend:
    """Builds a per-task branch table via ``script_for`` and replays it."""

    kind = "scripted"

    def __init__(self, script_for: Callable[[Task], Sequence[ScriptBranch]]) -> None:
        self._script_for = script_for

    def bind(self, task: Task) -> _ScriptedEpisode:
        return _ScriptedEpisode(self._script_for(task))


def fixed_turns_backend(turns: Sequence[str]) -> ScriptedBackend:
    """Backend that plays the given turns in order regardless of feedback."""
    branch = ScriptBranch(pattern="", turns=tuple(turns))
    return ScriptedBackend(lambda task: (branch,))


# ============================================================
# Desk policy family
# ============================================================
#
# One branch table per question family. The first turn answers along the
# primary tool route; the RETHINK branch holds three retries, each worded
# differently (fresh variable names, alternate tool routes) so no two
# actions in an episode ever share text; a tool result with no rethink
# after it means the attempt stands, so the policy finishes.

def _desk_programs(task: Task, colors: Sequence[str]) -> tuple[str, list[str]]:
    query = parse_query(task.query)
    question = task.query
    x = query.subject
    # Every program echoes final_answer on its last line so the tool result
    # displays the value the agent is about to commit to.
    if query.kind is TaskKind.COUNTING:
        return (
            f'final_answer = simple_query("{question}")\nfinal_answer',
            [
                f'hits = find("{x}")\nfinal_answer = count(hits)\nfinal_answer',
                f'recheck = simple_query("{question}")\n'
                "final_answer = recheck\nfinal_answer",
                f'survey = find("{x}")\nfinal_answer = count(survey)\nfinal_answer',
            ],
        )
    if query.kind is TaskKind.EXISTENCE:
        return (
            f'final_answer = bool_to_yesno(exists("{x}"))\nfinal_answer',
            [
                f'hits = find("{x}")\n'
                "final_answer = bool_to_yesno(count(hits) > 0)\nfinal_answer",
                f'double_check = exists("{x}")\n'
                "final_answer = bool_to_yesno(double_check)\nfinal_answer",
                f'survey = find("{x}")\n'
                "final_answer = bool_to_yesno(count(survey) > 0)\nfinal_answer",
            ],
        )
    if query.kind is TaskKind.ATTRIBUTE:
        options = "[" + ", ".join(f'"{c}"' for c in colors) + "]"
        return (
            f'final_answer = simple_query("{question}")\nfinal_answer',
            [
                f'final_answer = best_description_from_options("{x}", {options})\n'
                "final_answer",
                f'recheck = simple_query("{question}")\n'
                "final_answer = recheck\nfinal_answer",
                f'option_pick = best_description_from_options("{x}", {options})\n'
                "final_answer = option_pick\nfinal_answer",
            ],
        )
    if query.kind is TaskKind.SPATIAL:
        return (
            f'final_answer = simple_query("{question}")\nfinal_answer',
            [
                f'recheck = simple_query("{question}")\n'
                "final_answer = recheck\nfinal_answer",
                f'second_look = simple_query("{question}")\n'
                "final_answer = second_look\nfinal_answer",
                f'final_try = simple_query("{question}")\n'
                "final_answer = final_try\nfinal_answer",
            ],
        )
    a, b = query.subject, query.other
    return (
        f'final_answer = simple_query("{question}")\nfinal_answer',
        [
            f'a_count = count(find("{a}"))\nb_count = count(find("{b}"))\n'
            "final_answer = bool_to_yesno(a_count > b_count)\nfinal_answer",
            f'recheck = simple_query("{question}")\n'
            "final_answer = recheck\nfinal_answer",
            f'left_count = count(find("{a}"))\nright_count = count(find("{b}"))\n'
            "final_answer = bool_to_yesno(left_count > right_count)\nfinal_answer",
        ],
    )


def desk_script(
    task: Task, colors: Sequence[str] = DEFAULT_COLORS
) -> tuple[ScriptBranch, ...]:
    primary, fallbacks = _desk_programs(task, colors)
    return (
        ScriptBranch(r"\A\Z", (code_turn(primary),)),
        ScriptBranch(r"\ARETHINK: ", tuple(code_turn(f) for f in fallbacks)),
        ScriptBranch(r"\ARESULT: ", (DONE_TURN,)),
    )


def scripted_desk_backend(colors: Sequence[str] = DEFAULT_COLORS) -> ScriptedBackend:
    return ScriptedBackend(lambda task: desk_script(task, colors))


# ============================================================
# HTTP backend
# ============================================================

@dataclass(frozen=True)
class HttpChatConfig:
    endpoint: str                   # full URL of the chat-completions route
    model: str
    temperature: float = 0.8
    max_tokens: int = 512
    api_key_env: str = "MASKFLOW_API_KEY"
    timeout: float = 30.0
    retries: int = 2                # retries after the first attempt
    backoff: float = 0.5            # doubles per retry

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.retries < 0:
            raise ValueError("retries must be non-negative")


class _HttpEpisode:
    def __init__(self, config: HttpChatConfig) -> None:
        self._config = config

    def next_turn(self, prompt: str) -> str:
        cfg = self._config
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(cfg.api_key_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(cfg.retries + 1):
            if attempt:
                time.sleep(cfg.backoff * (2 ** (attempt - 1)))
            try:
                response = requests.post(
                    cfg.endpoint, json=body, headers=headers, timeout=cfg.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = BackendUnavailable(
                    f"server error {response.status_code}"
                )
                continue
            if response.status_code != 200:
                raise BackendUnavailable(
                    f"chat endpoint answered {response.status_code}"
                )
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendUnavailable(f"malformed chat response: {exc}") from exc
        raise BackendUnavailable(f"chat endpoint unreachable: {last_error}")


class HttpChatBackend:
    kind = "http_chat"

    def __init__(self, config: HttpChatConfig) -> None:
        self.config = config

    def bind(self, task: Task) -> _HttpEpisode:
        return _HttpEpisode(self.config)
