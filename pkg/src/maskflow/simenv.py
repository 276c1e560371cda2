"""Deterministic scene simulator: synthetic scenes, templated tasks, a pure
answer oracle, and noisy tool sessions.

Everything is driven by explicit seeds. One episode owns one ToolSession
whose RNG is split from (global seed, task id), so collection order and
parallelism never change the results.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

from .dsl import (
    COMPLETE_LIBRARY,
    ObjectHandle,
    Region,
    ToolFault,
)
from .model import SCHEMA_VERSION, Task

DEFAULT_CANVAS = (512, 512)
DEFAULT_VOCABULARY = (
    "ball", "book", "car", "cat", "chair", "dog", "lamp", "mug", "table", "tree",
)
DEFAULT_COLORS = ("red", "blue", "green", "yellow", "black", "white")
DEFAULT_SIZES = ("small", "large")


class UnsatisfiableKind(ValueError):
    """The requested task kind cannot be posed against this scene."""


# ============================================================
# Seed splitting
# ============================================================

def seed_split(root: int, label: str) -> int:
    """Derive an independent 64-bit stream seed from a root seed and label."""
    digest = hashlib.sha256(f"{root}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def episode_seed(global_seed: int, task_id: str) -> int:
    return seed_split(global_seed, f"episode:{task_id}")


# ============================================================
# Scenes
# ============================================================

@dataclass(frozen=True)
class SceneObject:
    name: str
    attributes: dict[str, str]
    bbox: tuple[int, int, int, int]

    def center(self) -> tuple[float, float]:
        l, u, r, lo = self.bbox
        return ((l + r) / 2, (u + lo) / 2)


@dataclass(frozen=True)
class Scene:
    scene_id: str
    objects: tuple[SceneObject, ...]
    canvas: tuple[int, int] = DEFAULT_CANVAS


@dataclass(frozen=True)
class EnvironmentConfig:
    vocabulary: tuple[str, ...] = DEFAULT_VOCABULARY
    colors: tuple[str, ...] = DEFAULT_COLORS
    sizes: tuple[str, ...] = DEFAULT_SIZES
    min_objects: int = 2
    max_objects: int = 6
    canvas: tuple[int, int] = DEFAULT_CANVAS

    def __post_init__(self) -> None:
        if self.min_objects < 0 or self.max_objects < self.min_objects:
            raise ValueError("object count bounds must satisfy 0 <= min <= max")
        if not self.vocabulary:
            raise ValueError("vocabulary must be non-empty")


def generate_scene(seed: int, config: EnvironmentConfig, scene_id: str | None = None) -> Scene:
    rng = random.Random(seed)
    width, height = config.canvas
    count = rng.randint(config.min_objects, config.max_objects)
    objects = []
    for _ in range(count):
        name = rng.choice(config.vocabulary)
        color = rng.choice(config.colors)
        size = rng.choice(config.sizes)
        w = rng.randint(20, 120)
        h = rng.randint(20, 120)
        left = rng.randint(0, width - w)
        upper = rng.randint(0, height - h)
        objects.append(SceneObject(
            name=name,
            attributes={"color": color, "size": size},
            bbox=(left, upper, left + w, upper + h),
        ))
    return Scene(
        scene_id=scene_id or f"scene-{seed:016x}",
        objects=tuple(objects),
        canvas=config.canvas,
    )


def find_objects(scene: Scene, name: str, region: Region | None = None) -> list[SceneObject]:
    hits = [o for o in scene.objects if o.name == name]
    if region is not None:
        hits = [o for o in hits if region.contains_center(o.bbox)]
    return hits


def handles_for(scene: Scene, objects: Iterable[SceneObject]) -> list[ObjectHandle]:
    """Stable handles: the ordinal is the object's 1-based rank among scene
    objects of the same name, so dropped detections never renumber the rest."""
    wanted = {id(o) for o in objects}
    rank: dict[str, int] = {}
    out: list[ObjectHandle] = []
    for obj in scene.objects:
        rank[obj.name] = rank.get(obj.name, 0) + 1
        if id(obj) in wanted:
            out.append(ObjectHandle(name=obj.name, ordinal=rank[obj.name], bbox=obj.bbox))
    return out


# ============================================================
# Tasks and the query oracle
# ============================================================

class TaskKind(str, Enum):
    EXISTENCE = "existence"
    COUNTING = "counting"
    ATTRIBUTE = "attribute"
    SPATIAL = "spatial"
    COMPARE = "compare"


@dataclass(frozen=True)
class Query:
    kind: TaskKind
    subject: str
    other: str | None = None


def _article(name: str) -> str:
    return "an" if name[0] in "aeiou" else "a"


def query_text(query: Query) -> str:
    if query.kind is TaskKind.COUNTING:
        return f"How many {query.subject}s are there?"
    if query.kind is TaskKind.EXISTENCE:
        return f"Is there {_article(query.subject)} {query.subject} in the scene?"
    if query.kind is TaskKind.ATTRIBUTE:
        return f"What color is the {query.subject}?"
    if query.kind is TaskKind.SPATIAL:
        return f"Which is further left, the {query.subject} or the {query.other}?"
    return f"Are there more {query.subject}s than {query.other}s?"


_QUERY_PATTERNS = (
    (TaskKind.COUNTING, re.compile(r"^how many (\w+)s are there\??$", re.IGNORECASE)),
    (TaskKind.EXISTENCE, re.compile(r"^is there an? (\w+) in the scene\??$", re.IGNORECASE)),
    (TaskKind.ATTRIBUTE, re.compile(r"^what color is the (\w+)\??$", re.IGNORECASE)),
    (TaskKind.SPATIAL, re.compile(r"^which is further left, the (\w+) or the (\w+)\??$", re.IGNORECASE)),
    (TaskKind.COMPARE, re.compile(r"^are there more (\w+)s than (\w+)s\??$", re.IGNORECASE)),
)


def parse_query(text: str) -> Query:
    """Invert query_text. Raises ToolFault for questions outside the five
    supported templates (simple_query surfaces this as an error feedback)."""
    stripped = text.strip()
    for kind, pattern in _QUERY_PATTERNS:
        match = pattern.match(stripped)
        if match:
            groups = match.groups()
            other = groups[1].lower() if len(groups) > 1 else None
            return Query(kind=kind, subject=groups[0].lower(), other=other)
    raise ToolFault(f"unsupported question: {text!r}")


def _leftmost(a: SceneObject, b: SceneObject) -> SceneObject:
    # Ties resolve toward the left edge, then toward scene order stability.
    if a.center()[0] != b.center()[0]:
        return a if a.center()[0] < b.center()[0] else b
    return a if a.bbox[0] <= b.bbox[0] else b


def oracle_answer(scene: Scene, query: Query) -> str:
    """Ground truth for a structured query. Pure and total over queries whose
    referents exist; ambiguous or missing referents raise ToolFault."""
    if query.kind is TaskKind.COUNTING:
        return str(len(find_objects(scene, query.subject)))
    if query.kind is TaskKind.EXISTENCE:
        return "yes" if find_objects(scene, query.subject) else "no"
    if query.kind is TaskKind.ATTRIBUTE:
        hits = find_objects(scene, query.subject)
        if len(hits) != 1:
            raise ToolFault(
                f"cannot answer: {len(hits)} objects match {query.subject!r}"
            )
        return hits[0].attributes["color"]
    if query.kind is TaskKind.SPATIAL:
        assert query.other is not None
        a_hits = find_objects(scene, query.subject)
        b_hits = find_objects(scene, query.other)
        if len(a_hits) != 1 or len(b_hits) != 1:
            raise ToolFault("spatial questions need exactly one object per name")
        return _leftmost(a_hits[0], b_hits[0]).name
    assert query.other is not None
    more = len(find_objects(scene, query.subject)) > len(find_objects(scene, query.other))
    return "yes" if more else "no"


def generate_task(
    scene: Scene,
    seed: int,
    kind: TaskKind,
    config: EnvironmentConfig,
    task_id: str | None = None,
) -> Task:
    """Pose one task of the given kind against the scene, or raise
    UnsatisfiableKind when the scene cannot support it."""
    rng = random.Random(seed)
    present = sorted({o.name for o in scene.objects})
    unique_names = sorted(
        name for name in present if len(find_objects(scene, name)) == 1
    )
    if kind is TaskKind.COUNTING:
        subject = rng.choice(present) if present else rng.choice(config.vocabulary)
        query = Query(kind, subject)
    elif kind is TaskKind.EXISTENCE:
        query = Query(kind, rng.choice(config.vocabulary))
    elif kind is TaskKind.ATTRIBUTE:
        if not unique_names:
            raise UnsatisfiableKind(
                f"scene {scene.scene_id}: no uniquely named object to describe"
            )
        query = Query(kind, rng.choice(unique_names))
    elif kind is TaskKind.SPATIAL:
        pairs = [
            (a, b)
            for i, a in enumerate(unique_names)
            for b in unique_names[i + 1:]
            if find_objects(scene, a)[0].center()[0]
            != find_objects(scene, b)[0].center()[0]
        ]
        if not pairs:
            raise UnsatisfiableKind(
                f"scene {scene.scene_id}: needs two uniquely named objects apart"
            )
        subject, other = rng.choice(pairs)
        query = Query(kind, subject, other)
    elif kind is TaskKind.COMPARE:
        subject = rng.choice(present) if present else rng.choice(config.vocabulary)
        others = [n for n in config.vocabulary if n != subject]
        query = Query(kind, subject, rng.choice(others))
    else:
        raise ValueError(f"unknown task kind: {kind}")
    return Task(
        task_id=task_id or f"{kind.value}-{scene.scene_id}-{seed:08x}",
        scene_ref=scene.scene_id,
        query=query_text(query),
        answer=oracle_answer(scene, query),
    )


# ============================================================
# Noise
# ============================================================

class ErrorMode(str, Enum):
    WRONG_VALUE = "wrong_value"
    MISS_DETECTION = "miss_detection"
    OFF_BY_ONE = "off_by_one"
    RAISE_EXCEPTION = "raise_exception"


@dataclass(frozen=True)
class NoiseModel:
    default_rate: float = 0.0
    rates: dict[str, float] = field(default_factory=dict)
    modes: dict[str, ErrorMode] = field(default_factory=dict)
    default_mode: ErrorMode = ErrorMode.WRONG_VALUE

    def __post_init__(self) -> None:
        for rate in [self.default_rate, *self.rates.values()]:
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"error rate {rate} outside [0, 1]")

    def rate_for(self, tool: str) -> float:
        return self.rates.get(tool, self.default_rate)

    def mode_for(self, tool: str) -> ErrorMode:
        return self.modes.get(tool, self.default_mode)


NOISELESS = NoiseModel()


@dataclass(frozen=True)
class ToolResult:
    """One tool invocation as the session saw it. ``corrupted`` is hidden
    from the agent: it never reaches feedback text, only test oracles and
    the sim discrepancy detector."""

    tool: str
    args: tuple[Any, ...]
    value: Any
    oracle_value: Any
    corrupted: bool

    def __post_init__(self) -> None:
        if not self.corrupted and self.value != self.oracle_value:
            raise ValueError("uncorrupted results must equal the oracle value")


def _corrupt_string(value: str, rng: random.Random, config: EnvironmentConfig) -> str:
    if value in ("yes", "no"):
        return "no" if value == "yes" else "yes"
    if value.lstrip("-").isdigit():
        n = int(value)
        bumped = n + rng.choice((-1, 1))
        return str(max(0, bumped) if bumped != n else n + 1)
    for pool in (config.colors, config.sizes, config.vocabulary):
        if value in pool:
            others = [p for p in pool if p != value]
            return rng.choice(others)
    pool = [c for c in config.colors if c != value]
    return rng.choice(pool)


def _apply_corruption(
    value: Any, mode: ErrorMode, rng: random.Random, config: EnvironmentConfig
) -> tuple[Any, bool]:
    """Perturb a value per the error mode. Returns (new_value, changed);
    modes that cannot touch the value report changed=False."""
    if mode is ErrorMode.MISS_DETECTION or (
        mode is ErrorMode.WRONG_VALUE and isinstance(value, list)
    ):
        if isinstance(value, list) and value:
            dropped = rng.randrange(len(value))
            return [v for i, v in enumerate(value) if i != dropped], True
        if value is True:
            return False, True
        return value, False
    if mode is ErrorMode.OFF_BY_ONE:
        if isinstance(value, str) and value.lstrip("-").isdigit():
            n = int(value)
            candidates = [c for c in (n - 1, n + 1) if c >= 0]
            return str(rng.choice(candidates)), True
        return value, False
    if mode is ErrorMode.WRONG_VALUE:
        if isinstance(value, bool):
            return not value, True
        if isinstance(value, str):
            return _corrupt_string(value, rng, config), True
        return value, False
    raise ValueError(f"unexpected error mode {mode}")


# ============================================================
# Sessions
# ============================================================

class ToolSession:
    """Binds one scene, one noise model, and one RNG stream for one episode.

    The DSL evaluator calls invoke(); corruption is drawn independently per
    call. The trace records every call of the current program run so the
    discrepancy detector can inspect what just happened.
    """

    def __init__(
        self,
        scene: Scene,
        noise: NoiseModel = NOISELESS,
        rng: random.Random | None = None,
        library: frozenset[str] = COMPLETE_LIBRARY,
        config: EnvironmentConfig | None = None,
        knowledge: dict[str, str] | None = None,
    ) -> None:
        self.scene = scene
        self.noise = noise
        self.rng = rng or random.Random(0)
        self.library = library
        self.config = config or EnvironmentConfig(canvas=scene.canvas)
        self.knowledge = dict(knowledge or {})
        self.trace: list[ToolResult] = []

    @property
    def canvas(self) -> tuple[int, int]:
        return self.scene.canvas

    def is_enabled(self, capability: str) -> bool:
        return capability in self.library

    def reset_trace(self) -> None:
        self.trace = []

    # -- oracle values ---------------------------------------

    def _oracle(self, tool: str, args: tuple[Any, ...]) -> Any:
        if tool == "find":
            region = args[1] if len(args) == 2 else None
            return handles_for(self.scene, find_objects(self.scene, args[0], region))
        if tool == "exists":
            region = args[1] if len(args) == 2 else None
            return bool(find_objects(self.scene, args[0], region))
        if tool == "verify_property":
            name, prop = args
            return any(
                prop in o.attributes.values() for o in find_objects(self.scene, name)
            )
        if tool == "best_description_from_options":
            name, options = args
            hits = find_objects(self.scene, name)
            if not hits:
                raise ToolFault(f"no object named {name!r} in the scene")
            values = set(hits[0].attributes.values())
            for option in options:
                if option in values:
                    return option
            raise ToolFault(f"none of the options matches {name!r}")
        if tool == "simple_query":
            return oracle_answer(self.scene, parse_query(args[0]))
        if tool == "llm_query":
            question = args[0].strip()
            if question not in self.knowledge:
                raise ToolFault("no external knowledge available for that question")
            return self.knowledge[question]
        raise ToolFault(f"unknown tool {tool!r}")

    # -- noisy invocation ------------------------------------

    def invoke(self, tool: str, args: tuple[Any, ...]) -> Any:
        value = self._oracle(tool, args)
        fired = self.rng.random() < self.noise.rate_for(tool)
        if not fired:
            self.trace.append(ToolResult(tool, args, value, value, corrupted=False))
            return value
        mode = self.noise.mode_for(tool)
        if mode is ErrorMode.RAISE_EXCEPTION:
            self.trace.append(ToolResult(tool, args, None, value, corrupted=True))
            raise ToolFault(f"simulated {tool} failure")
        corrupted_value, changed = _apply_corruption(value, mode, self.rng, self.config)
        self.trace.append(
            ToolResult(tool, args, corrupted_value, value, corrupted=changed)
        )
        return corrupted_value


# ============================================================
# Environment: scene store + session factory
# ============================================================

class Environment:
    def __init__(
        self,
        scenes: Iterable[Scene],
        config: EnvironmentConfig | None = None,
        noise: NoiseModel = NOISELESS,
        library: frozenset[str] = COMPLETE_LIBRARY,
        knowledge: dict[str, str] | None = None,
    ) -> None:
        self.scenes = {s.scene_id: s for s in scenes}
        self.config = config or EnvironmentConfig()
        self.noise = noise
        self.library = library
        self.knowledge = dict(knowledge or {})

    def scene_for(self, task: Task) -> Scene:
        if task.scene_ref not in self.scenes:
            raise KeyError(f"task {task.task_id}: unknown scene {task.scene_ref!r}")
        return self.scenes[task.scene_ref]

    def session_for(self, task: Task, global_seed: int) -> ToolSession:
        return ToolSession(
            scene=self.scene_for(task),
            noise=self.noise,
            rng=random.Random(episode_seed(global_seed, task.task_id)),
            library=self.library,
            config=self.config,
            knowledge=self.knowledge,
        )


# ============================================================
# Serialization
# ============================================================

def scene_to_record(scene: Scene) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "canvas": list(scene.canvas),
        "objects": [
            {
                "name": o.name,
                "attributes": dict(sorted(o.attributes.items())),
                "bbox": list(o.bbox),
            }
            for o in scene.objects
        ],
    }


def scene_from_record(record: dict[str, Any]) -> Scene:
    return Scene(
        scene_id=record["scene_id"],
        canvas=tuple(record["canvas"]),
        objects=tuple(
            SceneObject(
                name=o["name"],
                attributes=dict(o["attributes"]),
                bbox=tuple(o["bbox"]),
            )
            for o in record["objects"]
        ),
    )


def environment_config_from_dict(data: dict[str, Any]) -> EnvironmentConfig:
    return EnvironmentConfig(
        vocabulary=tuple(data.get("vocabulary", DEFAULT_VOCABULARY)),
        colors=tuple(data.get("colors", DEFAULT_COLORS)),
        sizes=tuple(data.get("sizes", DEFAULT_SIZES)),
        min_objects=data.get("min_objects", 2),
        max_objects=data.get("max_objects", 6),
        canvas=tuple(data.get("canvas", DEFAULT_CANVAS)),
    )


def noise_model_from_dict(data: dict[str, Any]) -> NoiseModel:
    return NoiseModel(
        default_rate=data.get("default_rate", 0.0),
        rates={k: float(v) for k, v in data.get("rates", {}).items()},
        modes={k: ErrorMode(v) for k, v in data.get("modes", {}).items()},
        default_mode=ErrorMode(data.get("default_mode", "wrong_value")),
    )


def environment_config_to_dict(config: EnvironmentConfig) -> dict[str, Any]:
    return {
        "vocabulary": list(config.vocabulary),
        "colors": list(config.colors),
        "sizes": list(config.sizes),
        "min_objects": config.min_objects,
        "max_objects": config.max_objects,
        "canvas": list(config.canvas),
    }


def noise_model_to_dict(noise: NoiseModel) -> dict[str, Any]:
    return {
        "default_rate": noise.default_rate,
        "rates": dict(sorted(noise.rates.items())),
        "modes": {k: v.value for k, v in sorted(noise.modes.items())},
        "default_mode": noise.default_mode.value,
    }
