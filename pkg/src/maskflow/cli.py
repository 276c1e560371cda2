"""Command-line pipeline: generate tasks, collect workflows, flag, build
mask datasets, evaluate losses, and inspect artifacts.

Every command routes its randomness through one --seed flag and writes
canonical line-delimited files, so re-running with the same inputs gives
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from .engine import (
    DetectorKind,
    DiscrepancyDetector,
    EpisodeLimits,
    collect_dataset,
    data_utilization,
    tool_use_stats,
)
from .flagmask import (
    conservation_count,
    emit_dataset,
    flag_actions,
    flagged_workflow,
    mask_dataset_from_workflows,
)
from .loss import (
    OracleScorer,
    TokenScorer,
    UniformScorer,
    UnigramScorer,
    loss_report_to_record,
    objective,
    report_table,
    tokenize,
)
from .model import (
    SCHEMA_VERSION,
    GenerationMode,
    MaskDataset,
    MaskVariant,
    Provenance,
    Task,
    Workflow,
    WorkflowDataset,
)
from .policies import HttpChatBackend, HttpChatConfig, scripted_desk_backend
from .protocol import render_sample_prompt, render_sample_target
from .records import (
    RecordError,
    file_digest,
    load_samples,
    load_tasks,
    read_records,
    write_manifest,
    write_records,
    write_tasks,
    write_workflow_dataset,
    workflow_from_record,
    workflow_to_record,
)
from .simenv import (
    Environment,
    Scene,
    TaskKind,
    UnsatisfiableKind,
    environment_config_from_dict,
    generate_scene,
    generate_task,
    noise_model_from_dict,
    scene_from_record,
    scene_to_record,
    seed_split,
)


class CliError(Exception):
    """User-facing failure; main() prints the message and exits nonzero."""


MODE_NAMES = {
    "standard": GenerationMode.STANDARD,
    "discrepancy": GenerationMode.DISCREPANCY_AWARE,
    "single-turn": GenerationMode.SINGLE_TURN,
}

VARIANT_NAMES = {
    "instruct-masking": MaskVariant.INSTRUCT,
    "random-masking": MaskVariant.RANDOM,
    "masking-w-rethink": MaskVariant.WITH_RETHINK,
    "naive-sft": MaskVariant.NAIVE_SFT,
}


# ============================================================
# Run configuration
# ============================================================

class RunConfig:
    def __init__(self, data: dict[str, Any], base_dir: Path) -> None:
        self.environment = environment_config_from_dict(data.get("environment", {}))
        self.noise = noise_model_from_dict(data.get("noise", {}))
        self.backend_spec = data.get("backend", {"kind": "scripted_desk"})
        limits = data.get("limits", {})
        self.limits = EpisodeLimits(
            max_turns=limits.get("max_turns", 10),
            max_rethinks=limits.get("max_rethinks", 3),
        )
        self.detector = DiscrepancyDetector(DetectorKind(data.get("detector", "sim_oracle")))
        if "seed" in data and not isinstance(data["seed"], int):
            raise CliError("config seed must be an integer")
        self.seed = data.get("seed")
        self.knowledge: dict[str, str] = dict(data.get("knowledge", {}))
        if "knowledge_path" in data:
            knowledge_path = base_dir / data["knowledge_path"]
            if not knowledge_path.exists():
                raise CliError(f"config references missing file: {knowledge_path}")
            self.knowledge.update(json.loads(knowledge_path.read_text()))

    def make_backend(self):
        spec = dict(self.backend_spec)
        kind = spec.pop("kind", "scripted_desk")
        if kind == "scripted_desk":
            return scripted_desk_backend(colors=self.environment.colors)
        if kind == "http_chat":
            return HttpChatBackend(HttpChatConfig(**spec))
        raise CliError(f"unknown backend kind {kind!r}")

    def make_environment(self, scenes: Sequence[Scene]) -> Environment:
        return Environment(
            scenes,
            config=self.environment,
            noise=self.noise,
            knowledge=self.knowledge,
        )


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig({}, Path("."))
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError("config must be a JSON object")
    return RunConfig(data, p.parent)


def resolve_seed(args: argparse.Namespace, config: RunConfig) -> int:
    if args.seed is not None:
        return args.seed
    if config.seed is not None:
        return config.seed
    return 0


def out_dir(args: argparse.Namespace) -> Path:
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ============================================================
# gen-tasks
# ============================================================

def generate_fixtures(
    config: RunConfig, n: int, seed: int
) -> tuple[list[Scene], list[Task]]:
    """One scene and one satisfiable task per index, deterministic in seed."""
    scenes: list[Scene] = []
    tasks: list[Task] = []
    kinds = list(TaskKind)
    for i in range(n):
        scene = generate_scene(
            seed_split(seed, f"scene:{i}"),
            config.environment,
            scene_id=f"scene-{i:05d}",
        )
        scenes.append(scene)
        task = None
        for offset in range(len(kinds)):
            kind = kinds[(i + offset) % len(kinds)]
            try:
                task = generate_task(
                    scene,
                    seed_split(seed, f"task:{i}"),
                    kind,
                    config.environment,
                    task_id=f"task-{i:05d}",
                )
                break
            except UnsatisfiableKind:
                continue
        if task is None:
            # counting and existence are always satisfiable, so this would
            # take an empty vocabulary; guard anyway
            raise CliError(f"scene {scene.scene_id} supports no task kind")
        tasks.append(task)
    return scenes, tasks


def cmd_gen_tasks(args: argparse.Namespace) -> int:
    if args.count < 1:
        raise CliError("--count must be at least 1")
    config = load_config(args.config)
    seed = resolve_seed(args, config)
    out = out_dir(args)
    scenes, tasks = generate_fixtures(config, args.count, seed)
    scene_digest = write_records(out / "scenes.jsonl", (scene_to_record(s) for s in scenes))
    write_manifest(
        out / "scenes.manifest.json",
        kind="scenes",
        count=len(scenes),
        digest=scene_digest,
        provenance=Provenance("gen-tasks", "0" * 64, seed),
    )
    task_digest = write_tasks(out / "tasks.jsonl", tasks)
    write_manifest(
        out / "tasks.manifest.json",
        kind="tasks",
        count=len(tasks),
        digest=task_digest,
        provenance=Provenance("gen-tasks", "0" * 64, seed),
    )
    print(f"wrote {len(scenes)} scenes and {len(tasks)} tasks to {out}")
    return 0


# ============================================================
# collect
# ============================================================

def load_scenes(path: Path) -> list[Scene]:
    scenes = []
    for number, record in read_records(path):
        try:
            scenes.append(scene_from_record(record))
        except (KeyError, ValueError) as exc:
            raise RecordError(f"line {number}: bad scene record ({exc})") from exc
    return scenes


def stats_record(
    mode: GenerationMode, stats, dataset: WorkflowDataset, seed: int
) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "collection_stats",
        "mode": mode.value,
        "seed": seed,
        "attempts": stats.attempts,
        "accepted": stats.accepted,
        "aborted": stats.aborted,
        "data_utilization": data_utilization(stats),
        "rethink_thoughts": stats.rethink_thoughts,
        "tool_invocations": stats.tool_invocations,
        "mean_code_actions": (
            tool_use_stats(dataset) if dataset.workflows else None
        ),
    }


def print_paired_comparison(out: Path) -> None:
    rows = []
    for name in sorted(MODE_NAMES):
        stats_path = out / f"stats-{name}.json"
        if stats_path.exists():
            record = json.loads(stats_path.read_text())
            rows.append((name, record["data_utilization"], record["accepted"],
                         record["attempts"]))
    if len(rows) < 2:
        return
    print("\npaired comparison (same seed, same tasks):")
    width = max(len(name) for name, *_ in rows)
    for name, utilization, accepted, attempts in rows:
        print(f"  {name.ljust(width)}  data utilization "
              f"{utilization:.3f} ({accepted}/{attempts})")


def cmd_collect(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    seed = resolve_seed(args, config)
    out = out_dir(args)
    mode_name = args.mode
    mode = MODE_NAMES[mode_name]
    tasks_path = Path(args.tasks) if args.tasks else out / "tasks.jsonl"
    scenes_path = Path(args.scenes) if args.scenes else out / "scenes.jsonl"
    for path in (tasks_path, scenes_path):
        if not path.exists():
            raise CliError(f"input not found: {path} (run gen-tasks first?)")
    tasks = load_tasks(tasks_path)
    if not tasks:
        raise CliError(f"no tasks in {tasks_path}")
    env = config.make_environment(load_scenes(scenes_path))
    backend = config.make_backend()
    dataset, rejected, stats = collect_dataset(
        tasks,
        backend,
        env,
        mode,
        global_seed=seed,
        limits=config.limits,
        detector=config.detector,
        jobs=args.jobs,
    )
    # canonical ordering: parallelism must never change bytes
    dataset = WorkflowDataset(
        workflows=tuple(sorted(dataset.workflows, key=lambda w: w.task_id)),
        provenance=dataset.provenance,
    )
    rejected = tuple(sorted(rejected, key=lambda w: w.task_id))

    write_workflow_dataset(out / f"workflows-{mode_name}.jsonl", dataset)
    rejected_digest = write_records(
        out / f"rejected-{mode_name}.jsonl",
        (workflow_to_record(w) for w in rejected),
    )
    write_manifest(
        out / f"rejected-{mode_name}.manifest.json",
        kind="rejected_workflows",
        count=len(rejected),
        digest=rejected_digest,
        provenance=dataset.provenance,
    )
    record = stats_record(mode, stats, dataset, seed)
    (out / f"stats-{mode_name}.json").write_text(
        json.dumps(record, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"mode {mode_name}: accepted {stats.accepted}/{stats.attempts} workflows")
    print(f"data utilization {record['data_utilization']:.3f}")
    if record["mean_code_actions"] is not None:
        print(f"mean code actions per accepted workflow "
              f"{record['mean_code_actions']:.2f}")
    print_paired_comparison(out)
    return 0


# ============================================================
# flag
# ============================================================

def flag_histogram(workflows: Sequence[Workflow]) -> dict[str, Any]:
    rule_counts = {"R1": 0, "R2": 0, "R3": 0}
    flagged_kind_counts: dict[str, int] = {}
    total_actions = 0
    flagged_actions = 0
    for workflow in workflows:
        report = flag_actions(workflow)
        total_actions += len(workflow.actions)
        for action, flag, hits in zip(workflow.actions, report.flags, report.rule_hits):
            for rule in hits:
                rule_counts[rule] += 1
            if flag == 0:
                flagged_actions += 1
                key = action.kind.value
                flagged_kind_counts[key] = flagged_kind_counts.get(key, 0) + 1
    by_kind = {
        kind: count / flagged_actions
        for kind, count in sorted(flagged_kind_counts.items())
    } if flagged_actions else {}
    return {
        "total_actions": total_actions,
        "flagged_actions": flagged_actions,
        "rule_hits": rule_counts,
        "flagged_share_by_kind": by_kind,
    }


def cmd_flag(args: argparse.Namespace) -> int:
    workflows_path = Path(args.workflows)
    if not workflows_path.exists():
        raise CliError(f"input not found: {workflows_path}")
    out = out_dir(args)
    workflows = []
    for number, record in read_records(workflows_path):
        try:
            workflows.append(workflow_from_record(record))
        except (KeyError, ValueError) as exc:
            raise RecordError(f"line {number}: bad workflow record ({exc})") from exc
    flagged = [flagged_workflow(w, flag_actions(w)) for w in workflows]
    digest = write_records(
        out / "flagged-workflows.jsonl", (workflow_to_record(w) for w in flagged)
    )
    write_manifest(
        out / "flagged-workflows.manifest.json",
        kind="flagged_workflows",
        count=len(flagged),
        digest=digest,
        provenance=Provenance("flagging", file_digest(workflows_path), 0),
    )
    histogram = flag_histogram(workflows)
    report = {"schema": SCHEMA_VERSION, "kind": "flag_report", **histogram}
    (out / "flag-report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"flagged {histogram['flagged_actions']} of "
          f"{histogram['total_actions']} actions across {len(flagged)} workflows")
    for rule, count in histogram["rule_hits"].items():
        print(f"  {rule} hits: {count}")
    for kind, share in histogram["flagged_share_by_kind"].items():
        print(f"  flagged {kind} share: {share:.1%}")
    return 0


# ============================================================
# build-dataset
# ============================================================

def cmd_build_dataset(args: argparse.Namespace) -> int:
    workflows_path = Path(args.workflows)
    if not workflows_path.exists():
        raise CliError(f"input not found: {workflows_path}")
    config = load_config(args.config)
    seed = resolve_seed(args, config)
    out = out_dir(args)
    variant_name = args.variant
    variant = VARIANT_NAMES[variant_name]
    workflows = []
    for number, record in read_records(workflows_path):
        try:
            workflows.append(workflow_from_record(record))
        except (KeyError, ValueError) as exc:
            raise RecordError(f"line {number}: bad workflow record ({exc})") from exc
    usable = [w for w in workflows if w.accepted or args.include_rejected]
    if not usable:
        raise CliError("no usable workflows (all rejected; see --include-rejected)")
    dataset = mask_dataset_from_workflows(
        usable,
        variant,
        seed=seed,
        source_digest=file_digest(workflows_path),
        allow_rejected=args.include_rejected,
    )
    path = out / f"samples-{variant_name}.jsonl"
    emit_dataset(dataset, path)
    print(f"wrote {len(dataset.samples)} samples to {path}")
    if variant is MaskVariant.INSTRUCT and not args.include_rejected:
        expected = conservation_count(usable)
        if len(dataset.samples) != expected:
            raise CliError(
                f"conservation violated: {len(dataset.samples)} samples, "
                f"expected {expected}"
            )
        print(f"conservation check: {expected} effective actions == "
              f"{len(dataset.samples)} samples")
    return 0


# ============================================================
# eval-loss
# ============================================================

def build_scorer(name: str, samples) -> TokenScorer:
    if name == "oracle":
        return OracleScorer()
    corpus = [render_sample_prompt(s) for s in samples]
    corpus += [render_sample_target(s) for s in samples]
    if name == "unigram":
        return UnigramScorer.fit(corpus)
    vocabulary = frozenset(
        token for text in corpus for token in tokenize(text)
    )
    if not vocabulary:
        raise CliError("dataset renders to no tokens; cannot build a scorer")
    return UniformScorer(vocabulary)


def cmd_eval_loss(args: argparse.Namespace) -> int:
    dataset_path = Path(args.dataset)
    if not dataset_path.exists():
        raise CliError(f"input not found: {dataset_path}")
    out = out_dir(args)
    samples = load_samples(dataset_path)
    if not samples:
        raise CliError(f"no samples in {dataset_path}")
    dataset_obj = _loaded_mask_dataset(samples, dataset_path)
    scorer = build_scorer(args.scorer, samples)
    report = objective(scorer, dataset_obj)
    record = {
        "schema": SCHEMA_VERSION,
        "kind": "loss_report",
        "scorer": args.scorer,
        "dataset_digest": file_digest(dataset_path),
        **loss_report_to_record(report),
    }
    (out / f"loss-{args.scorer}.json").write_text(
        json.dumps(record, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(report_table(report))
    return 0


def _loaded_mask_dataset(samples, path: Path):
    return MaskDataset(
        samples=samples,
        provenance=Provenance("eval-loss", file_digest(path), 0),
    )


# ============================================================
# stats
# ============================================================

def _table(rows: list[tuple[str, str]]) -> str:
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows)


def cmd_stats(args: argparse.Namespace) -> int:
    path = Path(args.input)
    if not path.exists():
        raise CliError(f"input not found: {path}")
    if path.suffix == ".json":
        record = json.loads(path.read_text())
        rows = [(key, json.dumps(value) if isinstance(value, (dict, list))
                 else str(value))
                for key, value in sorted(record.items())]
        print(_table(rows))
        return 0
    records = [record for _, record in read_records(path)]
    if not records:
        print("empty record file")
        return 0
    first = records[0]
    if "actions" in first:
        workflows = [workflow_from_record(r) for r in records]
        accepted = [w for w in workflows if w.accepted]
        modes: dict[str, int] = {}
        for w in workflows:
            modes[w.generation_mode.value] = modes.get(w.generation_mode.value, 0) + 1
        rethinks = sum(1 for w in workflows for a in w.actions if a.is_rethink)
        rows = [
            ("workflows", str(len(workflows))),
            ("accepted", str(len(accepted))),
            ("rethink thoughts", str(rethinks)),
            ("modes", json.dumps(dict(sorted(modes.items())))),
        ]
        if accepted:
            mean = sum(w.code_action_count() for w in accepted) / len(accepted)
            rows.append(("mean code actions", f"{mean:.2f}"))
        print(_table(rows))
    elif "variant" in first:
        samples = load_samples(path)
        by_variant: dict[str, int] = {}
        rewards = {0: 0, 1: 0}
        for sample in samples:
            by_variant[sample.variant.value] = by_variant.get(sample.variant.value, 0) + 1
            rewards[sample.reward] += 1
        print(_table([
            ("samples", str(len(samples))),
            ("by variant", json.dumps(dict(sorted(by_variant.items())))),
            ("reward=1", str(rewards[1])),
            ("reward=0", str(rewards[0])),
        ]))
    elif "query" in first:
        print(_table([
            ("tasks", str(len(records))),
            ("scenes referenced", str(len({r["scene_ref"] for r in records}))),
        ]))
    elif "objects" in first:
        sizes = [len(r["objects"]) for r in records]
        print(_table([
            ("scenes", str(len(records))),
            ("objects min/max", f"{min(sizes)}/{max(sizes)}"),
        ]))
    else:
        raise CliError(f"unrecognized record shape in {path}")
    return 0


# ============================================================
# Entry point
# ============================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskflow",
        description="Workflow collection and instruct-masking dataset pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-tasks", help="generate scene and task fixtures")
    gen.add_argument("--config", default=None)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("-n", "--count", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen_tasks)

    collect = sub.add_parser("collect", help="run episodes and collect workflows")
    collect.add_argument("--config", default=None)
    collect.add_argument("--seed", type=int, default=None)
    collect.add_argument("--mode", choices=sorted(MODE_NAMES), required=True)
    collect.add_argument("--tasks", default=None)
    collect.add_argument("--scenes", default=None)
    collect.add_argument("--jobs", type=int, default=1)
    collect.add_argument("--out", required=True)
    collect.set_defaults(func=cmd_collect)

    flag = sub.add_parser("flag", help="apply flagging rules to workflows")
    flag.add_argument("--workflows", required=True)
    flag.add_argument("--out", required=True)
    flag.set_defaults(func=cmd_flag)

    build = sub.add_parser("build-dataset", help="build mask training samples")
    build.add_argument("--config", default=None)
    build.add_argument("--workflows", required=True)
    build.add_argument("--variant", choices=sorted(VARIANT_NAMES), required=True)
    build.add_argument("--seed", type=int, default=None)
    build.add_argument("--include-rejected", action="store_true")
    build.add_argument("--out", required=True)
    build.set_defaults(func=cmd_build_dataset)

    loss = sub.add_parser("eval-loss", help="evaluate the objective on a dataset")
    loss.add_argument("--dataset", required=True)
    loss.add_argument("--scorer", choices=["oracle", "unigram", "uniform"],
                      default="uniform")
    loss.add_argument("--out", required=True)
    loss.set_defaults(func=cmd_eval_loss)

    stats = sub.add_parser("stats", help="summarize any pipeline artifact")
    stats.add_argument("--input", required=True)
    stats.set_defaults(func=cmd_stats)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, RecordError, UnsatisfiableKind) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
