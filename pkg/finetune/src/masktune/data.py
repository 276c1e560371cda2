"""Reader for dwim/v1 masked-sample files.

This package consumes the serialized dataset format only; it renders the
prompt and completion text from the record fields itself and never imports
the producing pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

SCHEMA = "dwim/v1"


class DatasetError(ValueError):
    """Malformed dataset; the message always names the offending line."""


# ------------------------------------------------------------
# Transcript rendering (must match the producer byte for byte)
# ------------------------------------------------------------

def _escape_payload(payload: str) -> str:
    return payload.replace("&", "&amp;").replace("</result>", "&lt;/result&gt;")


def _render_action(obj: dict[str, Any]) -> str:
    kind = obj["kind"]
    if kind == "Done":
        return "<done></done>"
    if kind == "Code":
        return f"<code>```\n{obj['content']}\n```</code>"
    if kind == "Thought":
        return f"<thought>{obj['content']}</thought>"
    raise ValueError(f"unknown action kind {kind!r}")


def _render_step(obj: dict[str, Any]) -> str:
    text = _render_action(obj["action"])
    feedback = obj["feedback"]
    if feedback is not None:
        text += f"\n<result>{_escape_payload(feedback['payload'])}</result>"
    return text


def _render_steps(steps: Iterable[dict[str, Any]]) -> str:
    return "\n".join(_render_step(s) for s in steps)


@dataclass(frozen=True)
class Example:
    task_id: str
    prompt: str
    completion: str
    reward: int


def _example_from_record(record: dict[str, Any]) -> Example:
    variant = record["variant"]
    if variant == "naive_sft":
        prompt_parts = [record["instruction"]]
        completion = _render_steps(record["target"])
    else:
        prompt_parts = []
        if record["prefix"]:
            prompt_parts.append(_render_steps(record["prefix"]))
        if record["mask_token"]:
            prompt_parts.append(record["mask_token"])
        if record["suffix"]:
            prompt_parts.append(_render_steps(record["suffix"]))
        prompt_parts.append(record["instruction"])
        completion = _render_action(record["target"])
    return Example(
        task_id=record["task_id"],
        prompt="\n".join(prompt_parts),
        completion=completion,
        reward=record["reward"],
    )


def load_dataset(path: str | Path) -> list[Example]:
    """One example per record. Refuses malformed files, naming the line."""
    examples: list[Example] = []
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {number}: not valid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise DatasetError(f"line {number}: record must be a JSON object")
            if record.get("schema") != SCHEMA:
                raise DatasetError(
                    f"line {number}: schema must be {SCHEMA!r}, "
                    f"got {record.get('schema')!r}"
                )
            try:
                examples.append(_example_from_record(record))
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"line {number}: bad sample record ({exc})") from exc
    return examples


# ------------------------------------------------------------
# Whitespace tokenization
# ------------------------------------------------------------

def tokenize(text: str) -> list[str]:
    return text.split()


class WhitespaceVocab:
    """Token ids over whitespace-split text. Id 0 pads, 1 starts a sequence,
    2 covers tokens unseen at fit time."""

    PAD, BOS, UNK = 0, 1, 2
    _SPECIALS = ("[pad]", "[bos]", "[unk]")

    def __init__(self, tokens: Iterable[str]) -> None:
        seen = sorted(set(tokens))
        self._id_by_token = {t: i for i, t in enumerate(self._SPECIALS)}
        for token in seen:
            if token not in self._id_by_token:
                self._id_by_token[token] = len(self._id_by_token)
        self._token_by_id = {i: t for t, i in self._id_by_token.items()}

    @classmethod
    def fit(cls, examples: Iterable[Example]) -> "WhitespaceVocab":
        tokens: list[str] = []
        for example in examples:
            tokens.extend(tokenize(example.prompt))
            tokens.extend(tokenize(example.completion))
        return cls(tokens)

    def __len__(self) -> int:
        return len(self._id_by_token)

    def encode(self, text: str) -> list[int]:
        return [self._id_by_token.get(t, self.UNK) for t in tokenize(text)]

    def token(self, token_id: int) -> str:
        return self._token_by_id[token_id]

    def to_obj(self) -> dict[str, int]:
        return dict(self._id_by_token)

    @classmethod
    def from_obj(cls, obj: dict[str, int]) -> "WhitespaceVocab":
        vocab = cls.__new__(cls)
        vocab._id_by_token = dict(obj)
        vocab._token_by_id = {i: t for t, i in obj.items()}
        return vocab
