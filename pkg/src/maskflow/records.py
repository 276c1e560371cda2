"""Line-delimited dataset serialization (schema ``dwim/v1``).

One JSON object per line, UTF-8, canonical key order, no timestamps.
Writing the same data twice yields byte-identical files, and every dataset
travels with a manifest carrying provenance and a content digest.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Iterator

from .model import (
    SCHEMA_VERSION,
    Action,
    ActionKind,
    Feedback,
    GenerationMode,
    MaskDataset,
    MaskSample,
    MaskVariant,
    Provenance,
    Step,
    Task,
    Workflow,
    WorkflowDataset,
)


class RecordError(ValueError):
    """Malformed record file; message always names the offending line."""


# ============================================================
# Canonical JSON
# ============================================================

def canonical_line(record: dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def content_digest(lines: Iterable[str]) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def config_digest(config: dict[str, Any]) -> str:
    return hashlib.sha256(canonical_line(config).encode("utf-8")).hexdigest()


# ============================================================
# Field converters
# ============================================================

def action_to_obj(action: Action) -> dict[str, Any]:
    return {
        "index": action.index,
        "kind": action.kind.value,
        "content": action.content,
        "is_rethink": action.is_rethink,
    }


def action_from_obj(obj: dict[str, Any]) -> Action:
    return Action(
        index=obj["index"],
        kind=ActionKind(obj["kind"]),
        content=obj["content"],
        is_rethink=obj["is_rethink"],
    )


def feedback_to_obj(feedback: Feedback) -> dict[str, Any]:
    return {
        "step_index": feedback.step_index,
        "payload": feedback.payload,
        "is_error": feedback.is_error,
    }


def feedback_from_obj(obj: dict[str, Any]) -> Feedback:
    return Feedback(
        step_index=obj["step_index"],
        payload=obj["payload"],
        is_error=obj["is_error"],
    )


def step_to_obj(step: Step) -> dict[str, Any]:
    action, feedback = step
    return {
        "action": action_to_obj(action),
        "feedback": feedback_to_obj(feedback) if feedback is not None else None,
    }


def step_from_obj(obj: dict[str, Any]) -> Step:
    feedback = obj["feedback"]
    return (
        action_from_obj(obj["action"]),
        feedback_from_obj(feedback) if feedback is not None else None,
    )


def workflow_to_record(workflow: Workflow) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "task_id": workflow.task_id,
        "actions": [action_to_obj(a) for a in workflow.actions],
        "feedbacks": [feedback_to_obj(f) for f in workflow.feedbacks],
        "flags": list(workflow.flags) if workflow.flags is not None else None,
        "prediction": workflow.prediction,
        "accepted": workflow.accepted,
        "generation_mode": workflow.generation_mode.value,
        "abort_reason": workflow.abort_reason,
    }


def workflow_from_record(record: dict[str, Any]) -> Workflow:
    return Workflow(
        task_id=record["task_id"],
        actions=tuple(action_from_obj(o) for o in record["actions"]),
        feedbacks=tuple(feedback_from_obj(o) for o in record["feedbacks"]),
        flags=tuple(record["flags"]) if record["flags"] is not None else None,
        prediction=record["prediction"],
        accepted=record["accepted"],
        generation_mode=GenerationMode(record["generation_mode"]),
        abort_reason=record.get("abort_reason"),
    )


def sample_to_record(sample: MaskSample) -> dict[str, Any]:
    if sample.variant is MaskVariant.NAIVE_SFT:
        assert sample.target_steps is not None
        target: Any = [step_to_obj(s) for s in sample.target_steps]
    else:
        assert sample.target is not None
        target = action_to_obj(sample.target)
    return {
        "schema": SCHEMA_VERSION,
        "task_id": sample.task_id,
        "variant": sample.variant.value,
        "target_index": sample.target_index,
        "prefix": [step_to_obj(s) for s in sample.prefix],
        "mask_token": sample.mask_token,
        "suffix": [step_to_obj(s) for s in sample.suffix],
        "instruction": sample.instruction,
        "target": target,
        "reward": sample.reward,
        "flags": list(sample.flags),
    }


def sample_from_record(record: dict[str, Any]) -> MaskSample:
    variant = MaskVariant(record["variant"])
    if variant is MaskVariant.NAIVE_SFT:
        target = None
        target_steps: tuple[Step, ...] | None = tuple(
            step_from_obj(o) for o in record["target"]
        )
    else:
        target = action_from_obj(record["target"])
        target_steps = None
    return MaskSample(
        task_id=record["task_id"],
        variant=variant,
        target_index=record["target_index"],
        prefix=tuple(step_from_obj(o) for o in record["prefix"]),
        mask_token=record["mask_token"],
        suffix=tuple(step_from_obj(o) for o in record["suffix"]),
        instruction=record["instruction"],
        target=target,
        target_steps=target_steps,
        reward=record["reward"],
        flags=tuple(record["flags"]),
    )


def task_to_record(task: Task) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "task_id": task.task_id,
        "scene_ref": task.scene_ref,
        "query": task.query,
        "answer": task.answer,
    }


def task_from_record(record: dict[str, Any]) -> Task:
    return Task(
        task_id=record["task_id"],
        scene_ref=record["scene_ref"],
        query=record["query"],
        answer=record["answer"],
    )


# ============================================================
# File IO
# ============================================================

def write_records(path: str | Path, records: Iterable[dict[str, Any]]) -> str:
    """Write one canonical JSON line per record; returns the content digest."""
    lines = [canonical_line(r) for r in records]
    Path(path).write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )
    return content_digest(lines)


def read_records(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield (line_number, record), enforcing the schema field per line."""
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"line {number}: not valid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise RecordError(f"line {number}: record must be a JSON object")
            if record.get("schema") != SCHEMA_VERSION:
                raise RecordError(
                    f"line {number}: schema must be {SCHEMA_VERSION!r}, "
                    f"got {record.get('schema')!r}"
                )
            yield number, record


def file_digest(path: str | Path) -> str:
    lines = [line.rstrip("\n") for line in Path(path).read_text(encoding="utf-8").splitlines()]
    return content_digest(lines)


# ============================================================
# Dataset files with manifests
# ============================================================

def provenance_to_obj(provenance: Provenance) -> dict[str, Any]:
    return {
        "generator_mode": provenance.generator_mode,
        "config_digest": provenance.config_digest,
        "seed": provenance.seed,
    }


def provenance_from_obj(obj: dict[str, Any]) -> Provenance:
    return Provenance(
        generator_mode=obj["generator_mode"],
        config_digest=obj["config_digest"],
        seed=obj["seed"],
    )


def write_manifest(
    path: str | Path,
    kind: str,
    count: int,
    digest: str,
    provenance: Provenance,
    extra: dict[str, Any] | None = None,
) -> None:
    manifest: dict[str, Any] = {
        "schema": SCHEMA_VERSION,
        "kind": kind,
        "count": count,
        "digest": digest,
        "provenance": provenance_to_obj(provenance),
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(
        json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def read_manifest(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_workflow_dataset(path: str | Path, dataset: WorkflowDataset) -> str:
    digest = write_records(path, (workflow_to_record(w) for w in dataset.workflows))
    write_manifest(
        manifest_path_for(path),
        kind="workflows",
        count=len(dataset.workflows),
        digest=digest,
        provenance=dataset.provenance,
    )
    return digest


def load_workflows(path: str | Path) -> tuple[Workflow, ...]:
    out = []
    for number, record in read_records(path):
        try:
            out.append(workflow_from_record(record))
        except (KeyError, ValueError) as exc:
            raise RecordError(f"line {number}: bad workflow record ({exc})") from exc
    return tuple(out)


def write_mask_dataset(path: str | Path, dataset: MaskDataset) -> str:
    counts: dict[str, int] = {}
    for sample in dataset.samples:
        counts[sample.variant.value] = counts.get(sample.variant.value, 0) + 1
    digest = write_records(path, (sample_to_record(s) for s in dataset.samples))
    write_manifest(
        manifest_path_for(path),
        kind="mask_samples",
        count=len(dataset.samples),
        digest=digest,
        provenance=dataset.provenance,
        extra={"counts_by_variant": dict(sorted(counts.items()))},
    )
    return digest


def load_samples(path: str | Path) -> tuple[MaskSample, ...]:
    out = []
    for number, record in read_records(path):
        try:
            out.append(sample_from_record(record))
        except (KeyError, ValueError) as exc:
            raise RecordError(f"line {number}: bad sample record ({exc})") from exc
    return tuple(out)


def write_tasks(path: str | Path, tasks: Iterable[Task]) -> str:
    return write_records(path, (task_to_record(t) for t in tasks))


def load_tasks(path: str | Path) -> tuple[Task, ...]:
    out = []
    for number, record in read_records(path):
        try:
            out.append(task_from_record(record))
        except (KeyError, ValueError) as exc:
            raise RecordError(f"line {number}: bad task record ({exc})") from exc
    return tuple(out)


def manifest_path_for(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".manifest.json")
