"""Episode loop behavior: modes, limits, rethink injection, batch stats."""

import random

import pytest

from maskflow.engine import (
    CollectionStats,
    DetectorKind,
    DiscrepancyDetector,
    EpisodeLimits,
    collect_dataset,
    data_utilization,
    detect_discrepancy,
    run_episode,
    synthesize_rethink,
    tool_use_stats,
)
from maskflow.model import (
    Action,
    ActionKind,
    Feedback,
    GenerationMode,
    Provenance,
    Task,
    Workflow,
    WorkflowDataset,
    reward,
    split_rethink,
)
from maskflow.policies import (
    ScriptBranch,
    ScriptedBackend,
    code_turn,
    fixed_turns_backend,
    scripted_desk_backend,
    thought_turn,
)
from maskflow.protocol import ANSWER_LINE_PREFIX, extract_history_section
from maskflow.simenv import (
    Environment,
    ErrorMode,
    NoiseModel,
    TaskKind,
    ToolSession,
    UnsatisfiableKind,
    generate_scene,
    generate_task,
    seed_split,
)

from conftest import make_fixture_config, make_fixture_scene


SILENT_NOISE = NoiseModel(
    default_rate=0.25,
    modes={
        "find": ErrorMode.MISS_DETECTION,
        "exists": ErrorMode.WRONG_VALUE,
        "simple_query": ErrorMode.WRONG_VALUE,
    },
    default_mode=ErrorMode.WRONG_VALUE,
)


def fixture_task(kind=TaskKind.COUNTING, seed=3):
    return generate_task(make_fixture_scene(), seed, kind, make_fixture_config())


def fixture_env(noise=None):
    return Environment(
        scenes=[make_fixture_scene()],
        config=make_fixture_config(),
        noise=noise or NoiseModel(),
    )


def task_batch(count=60, seed_root=5):
    config = make_fixture_config()
    kinds = list(TaskKind)
    scenes, tasks = [], []
    i = 0
    while len(tasks) < count:
        scene = generate_scene(seed_split(seed_root, f"scene{i}"), config)
        try:
            task = generate_task(
                scene, seed_split(seed_root, f"task{i}"), kinds[i % len(kinds)], config
            )
        except UnsatisfiableKind:
            i += 1
            continue
        scenes.append(scene)
        tasks.append(task)
        i += 1
    return scenes, tasks


class RecordingBackend:
    """Wraps a backend and keeps every prompt it was shown."""

    def __init__(self, inner):
        self.kind = inner.kind
        self._inner = inner
        self.prompts = []

    def bind(self, task):
        episode = self._inner.bind(task)
        prompts = self.prompts

        class _Spy:
            def next_turn(self, prompt):
                prompts.append(prompt)
                return episode.next_turn(prompt)

        return _Spy()


# ------------------------------------------------------------
# Clean episodes
# ------------------------------------------------------------

def test_noiseless_episode_accepts_in_every_mode():
    task = fixture_task()
    env = fixture_env()
    backend = scripted_desk_backend()
    for mode in GenerationMode:
        workflow = run_episode(task, backend, env.session_for(task, 1), mode)
        assert workflow.accepted
        assert workflow.prediction == task.answer
        assert reward(workflow, task) == 1


def test_single_turn_appends_implicit_done():
    task = fixture_task()
    env = fixture_env()
    workflow = run_episode(
        task, scripted_desk_backend(), env.session_for(task, 1),
        GenerationMode.SINGLE_TURN,
    )
    kinds = [a.kind for a in workflow.actions]
    assert kinds == [ActionKind.CODE, ActionKind.DONE]
    assert workflow.actions[1].index == 2


def test_single_turn_with_thought_policy_is_rejected():
    task = fixture_task()
    env = fixture_env()
    backend = fixed_turns_backend([thought_turn("pondering")])
    workflow = run_episode(
        task, backend, env.session_for(task, 1), GenerationMode.SINGLE_TURN
    )
    assert [a.kind for a in workflow.actions] == [ActionKind.THOUGHT, ActionKind.DONE]
    assert not workflow.accepted
    assert workflow.prediction is None


# ------------------------------------------------------------
# Rethink injection
# ------------------------------------------------------------

def certain_noise(tool, mode):
    return NoiseModel(default_rate=0.0, rates={tool: 1.0}, modes={tool: mode})


def test_rethink_lands_between_bad_code_and_retry():
    task = fixture_task()
    env = fixture_env(certain_noise("simple_query", ErrorMode.WRONG_VALUE))
    workflow = run_episode(
        task, scripted_desk_backend(), env.session_for(task, 1),
        GenerationMode.DISCREPANCY_AWARE,
    )
    kinds = [(a.kind, a.is_rethink) for a in workflow.actions]
    assert kinds[0] == (ActionKind.CODE, False)
    assert kinds[1] == (ActionKind.THOUGHT, True)
    assert kinds[2] == (ActionKind.CODE, False)
    # The retry consumes the index two past the flagged action.
    assert workflow.actions[2].index == workflow.actions[0].index + 2
    # First retry avoids the poisoned tool, so the episode recovers.
    assert workflow.accepted


def test_rethink_text_is_unique_per_step():
    task = fixture_task()
    env = fixture_env(certain_noise("simple_query", ErrorMode.WRONG_VALUE))
    noise = NoiseModel(
        default_rate=1.0,
        modes={"simple_query": ErrorMode.WRONG_VALUE,
               "find": ErrorMode.MISS_DETECTION},
        default_mode=ErrorMode.WRONG_VALUE,
    )
    env = fixture_env(noise)
    workflow = run_episode(
        task, scripted_desk_backend(), env.session_for(task, 1),
        GenerationMode.DISCREPANCY_AWARE,
    )
    rethinks = [a.content for a in workflow.actions if a.is_rethink]
    assert len(rethinks) == 3
    assert len(set(rethinks)) == 3
    for content in rethinks:
        assert "however" in content.lower()
        assert "rethink" in content.lower()
        assert split_rethink(content) is not None


def test_max_rethinks_caps_injection():
    task = fixture_task()
    noise = NoiseModel(
        default_rate=1.0,
        modes={"simple_query": ErrorMode.WRONG_VALUE,
               "find": ErrorMode.MISS_DETECTION},
        default_mode=ErrorMode.WRONG_VALUE,
    )
    env = fixture_env(noise)
    workflow = run_episode(
        task, scripted_desk_backend(), env.session_for(task, 1),
        GenerationMode.DISCREPANCY_AWARE,
        EpisodeLimits(max_turns=10, max_rethinks=2),
    )
    assert sum(a.is_rethink for a in workflow.actions) == 2


def test_rethink_consumes_turn_budget():
    # max_turns=2 leaves no room for a retry after Code + injected Rethink.
    task = fixture_task()
    env = fixture_env(certain_noise("simple_query", ErrorMode.WRONG_VALUE))
    workflow = run_episode(
        task, scripted_desk_backend(), env.session_for(task, 1),
        GenerationMode.DISCREPANCY_AWARE, EpisodeLimits(max_turns=2),
    )
    assert len(workflow.actions) == 2
    assert workflow.actions[-1].is_rethink
    assert not workflow.accepted


def test_no_rethink_at_final_turn():
    task = fixture_task()
    env = fixture_env(certain_noise("simple_query", ErrorMode.WRONG_VALUE))
    workflow = run_episode(
        task, scripted_desk_backend(), env.session_for(task, 1),
        GenerationMode.DISCREPANCY_AWARE, EpisodeLimits(max_turns=1),
    )
    assert len(workflow.actions) == 1
    assert workflow.actions[0].kind is ActionKind.CODE
    assert not workflow.accepted
    assert workflow.prediction is None


def test_standard_mode_never_injects():
    task = fixture_task()
    env = fixture_env(certain_noise("simple_query", ErrorMode.WRONG_VALUE))
    workflow = run_episode(
        task, scripted_desk_backend(), env.session_for(task, 1),
        GenerationMode.STANDARD,
    )
    assert not any(a.is_rethink for a in workflow.actions)
    assert not workflow.accepted


def test_loud_fault_triggers_rethink_too():
    task = fixture_task()
    env = fixture_env(certain_noise("simple_query", ErrorMode.RAISE_EXCEPTION))
    workflow = run_episode(
        task, scripted_desk_backend(), env.session_for(task, 1),
        GenerationMode.DISCREPANCY_AWARE,
    )
    assert workflow.feedbacks[0].is_error
    assert workflow.actions[1].is_rethink
    assert workflow.accepted  # find-based retry dodges the poisoned tool


# ------------------------------------------------------------
# Aborts and limits
# ------------------------------------------------------------

def test_script_exhaustion_aborts_episode():
    task = fixture_task()
    env = fixture_env()
    backend = fixed_turns_backend([thought_turn("only turn")])
    workflow = run_episode(
        task, backend, env.session_for(task, 1), GenerationMode.STANDARD
    )
    assert workflow.abort_reason is not None
    assert workflow.abort_reason.startswith("script_exhausted")
    assert not workflow.accepted


def test_parse_failure_gets_one_silent_redraw():
    task = fixture_task()
    env = fixture_env()
    backend = fixed_turns_backend(["no tags here", code_turn("final_answer = 1")])
    workflow = run_episode(
        task, backend, env.session_for(task, 1), GenerationMode.SINGLE_TURN
    )
    assert workflow.abort_reason is None
    assert workflow.actions[0].kind is ActionKind.CODE


def test_two_parse_failures_abort():
    task = fixture_task()
    env = fixture_env()
    backend = fixed_turns_backend(["junk one", "junk two", "<done></done>"])
    workflow = run_episode(
        task, backend, env.session_for(task, 1), GenerationMode.STANDARD
    )
    assert workflow.abort_reason is not None
    assert workflow.abort_reason.startswith("parse_failure")
    assert workflow.actions == ()


def test_turn_cap_without_done_is_rejected():
    task = fixture_task()
    env = fixture_env()
    backend = ScriptedBackend(
        lambda t: (ScriptBranch("", tuple(thought_turn(f"note {i}") for i in range(12))),)
    )
    workflow = run_episode(
        task, backend, env.session_for(task, 1), GenerationMode.STANDARD,
        EpisodeLimits(max_turns=4),
    )
    assert len(workflow.actions) == 4
    assert not workflow.accepted
    assert workflow.abort_reason is None


def test_limits_validation():
    with pytest.raises(ValueError):
        EpisodeLimits(max_turns=0)
    with pytest.raises(ValueError):
        EpisodeLimits(max_rethinks=-1)


# ------------------------------------------------------------
# Prompt discipline
# ------------------------------------------------------------

def test_mode_soundness_on_rendered_prompts():
    task = fixture_task()
    env = fixture_env(SILENT_NOISE)
    for mode in GenerationMode:
        backend = RecordingBackend(scripted_desk_backend())
        run_episode(task, backend, env.session_for(task, 7), mode)
        assert backend.prompts
        for prompt in backend.prompts:
            count = prompt.count(ANSWER_LINE_PREFIX)
            if mode is GenerationMode.DISCREPANCY_AWARE:
                assert count == 1
                assert task.answer in prompt
            else:
                assert count == 0


def test_history_grows_by_prefix():
    task = fixture_task()
    env = fixture_env(SILENT_NOISE)
    backend = RecordingBackend(scripted_desk_backend())
    run_episode(
        task, backend, env.session_for(task, 11), GenerationMode.DISCREPANCY_AWARE
    )
    sections = [extract_history_section(p) for p in backend.prompts]
    for earlier, later in zip(sections, sections[1:]):
        assert later.startswith(earlier)


# ------------------------------------------------------------
# Discrepancy detection
# ------------------------------------------------------------

def test_detector_fires_on_error_feedback():
    task = fixture_task()
    detector = DiscrepancyDetector()
    feedback = Feedback.from_payload(
        1, "Traceback (most recent call last):\n  boom\nNameError: nope"
    )
    description = detect_discrepancy(feedback, task, [], detector)
    assert description is not None
    assert "NameError" in description


def test_detector_fires_on_corrupted_trace():
    task = fixture_task()
    session = ToolSession(
        scene=make_fixture_scene(),
        noise=certain_noise("exists", ErrorMode.WRONG_VALUE),
        rng=random.Random(0),
    )
    session.invoke("exists", ("dog",))
    description = detect_discrepancy(
        Feedback.from_payload(1, "False"), task, [], DiscrepancyDetector(),
        trace=session.trace,
    )
    assert description is not None
    assert "exists" in description


def test_detector_fires_on_answer_mismatch():
    task = fixture_task()
    description = detect_discrepancy(
        Feedback.from_payload(1, "9"), task, [], DiscrepancyDetector(),
        bindings={"final_answer": "9"},
    )
    assert description is not None
    assert task.answer in description


def test_detector_silent_on_clean_step():
    task = fixture_task()
    assert detect_discrepancy(
        Feedback.from_payload(1, task.answer), task, [], DiscrepancyDetector(),
        bindings={"final_answer": task.answer},
    ) is None


def test_marker_detector_reads_backend_rethink():
    task = fixture_task()
    rethink = Action(
        2, ActionKind.THOUGHT,
        "Discrepancy: the count disagrees with the tally.\nNext: recount.",
        is_rethink=True,
    )
    detector = DiscrepancyDetector(kind=DetectorKind.MARKER_PARSE)
    description = detect_discrepancy(None, task, [rethink], detector)
    assert description == "the count disagrees with the tally."
    plain = Action(2, ActionKind.THOUGHT, "carry on")
    assert detect_discrepancy(None, task, [plain], detector) is None


def test_marker_mode_recognizes_backend_authored_rethinks():
    task = fixture_task()
    env = fixture_env()
    turns = [
        code_turn("final_answer = 99\nfinal_answer"),
        thought_turn("Discrepancy: 99 cannot be right.\nNext: recount properly."),
        code_turn('final_answer = simple_query("%s")\nfinal_answer' % task.query),
        "<done></done>",
    ]
    workflow = run_episode(
        task, fixed_turns_backend(turns), env.session_for(task, 1),
        GenerationMode.DISCREPANCY_AWARE,
        detector=DiscrepancyDetector(kind=DetectorKind.MARKER_PARSE),
    )
    assert [a.is_rethink for a in workflow.actions] == [False, True, False, False]
    assert workflow.accepted


def test_synthesized_rethink_parses_as_rethink():
    content = synthesize_rethink(4, "the tool lied")
    parts = split_rethink(content)
    assert parts is not None
    assert "step 4" in parts[0]


# ------------------------------------------------------------
# Batch collection
# ------------------------------------------------------------

def test_noiseless_utilization_is_one_in_all_modes():
    scenes, tasks = task_batch(40)
    env = Environment(scenes=scenes, config=make_fixture_config())
    backend = scripted_desk_backend()
    for mode in GenerationMode:
        dataset, rejected, stats = collect_dataset(
            tasks, backend, env, mode, global_seed=0
        )
        assert data_utilization(stats) == 1.0
        assert rejected == ()
        assert len(dataset.workflows) == len(tasks)


def test_paired_seed_dominance():
    scenes, tasks = task_batch(60)
    env = Environment(scenes=scenes, config=make_fixture_config(), noise=SILENT_NOISE)
    backend = scripted_desk_backend()
    for seed in range(4):
        results = {}
        for mode in GenerationMode:
            _, _, stats = collect_dataset(tasks, backend, env, mode, global_seed=seed)
            results[mode] = data_utilization(stats)
        assert results[GenerationMode.DISCREPANCY_AWARE] >= results[GenerationMode.STANDARD]
        assert results[GenerationMode.STANDARD] >= results[GenerationMode.SINGLE_TURN]


def test_dominance_holds_across_error_rates():
    scenes, tasks = task_batch(30)
    backend = scripted_desk_backend()
    for rate in (0.1, 0.5, 0.9):
        noise = NoiseModel(
            default_rate=rate,
            modes={"find": ErrorMode.MISS_DETECTION},
            default_mode=ErrorMode.WRONG_VALUE,
        )
        env = Environment(scenes=scenes, config=make_fixture_config(), noise=noise)
        _, _, aware = collect_dataset(
            tasks, backend, env, GenerationMode.DISCREPANCY_AWARE, global_seed=2
        )
        _, _, standard = collect_dataset(
            tasks, backend, env, GenerationMode.STANDARD, global_seed=2
        )
        assert aware.accepted >= standard.accepted


def test_collection_is_schedule_independent():
    scenes, tasks = task_batch(24)
    env = Environment(scenes=scenes, config=make_fixture_config(), noise=SILENT_NOISE)
    backend = scripted_desk_backend()
    serial = collect_dataset(
        tasks, backend, env, GenerationMode.DISCREPANCY_AWARE, global_seed=3, jobs=1
    )
    pooled = collect_dataset(
        tasks, backend, env, GenerationMode.DISCREPANCY_AWARE, global_seed=3, jobs=4
    )
    assert serial[0].workflows == pooled[0].workflows
    assert serial[1] == pooled[1]
    assert serial[2] == pooled[2]


def test_collection_stats_fields():
    scenes, tasks = task_batch(20)
    env = Environment(scenes=scenes, config=make_fixture_config(), noise=SILENT_NOISE)
    dataset, rejected, stats = collect_dataset(
        tasks, scripted_desk_backend(), env,
        GenerationMode.DISCREPANCY_AWARE, global_seed=9,
    )
    assert stats.attempts == 20
    assert stats.accepted == len(dataset.workflows)
    assert stats.accepted + len(rejected) == stats.attempts
    assert stats.aborted == 0
    assert stats.tool_invocations > 0
    assert stats.mode is GenerationMode.DISCREPANCY_AWARE


def test_empty_task_list_rejected():
    env = fixture_env()
    with pytest.raises(ValueError):
        collect_dataset([], scripted_desk_backend(), env,
                        GenerationMode.STANDARD, global_seed=0)


def test_provenance_pins_mode_seed_and_config():
    scenes, tasks = task_batch(5)
    env = Environment(scenes=scenes, config=make_fixture_config(), noise=SILENT_NOISE)
    dataset, _, _ = collect_dataset(
        tasks, scripted_desk_backend(), env,
        GenerationMode.DISCREPANCY_AWARE, global_seed=17,
    )
    assert dataset.provenance.generator_mode == "discrepancy_aware"
    assert dataset.provenance.seed == 17
    assert len(dataset.provenance.config_digest) == 64


# ------------------------------------------------------------
# Metrics
# ------------------------------------------------------------

def test_data_utilization_values():
    def stats(attempts, accepted):
        return CollectionStats(
            mode=GenerationMode.STANDARD, attempts=attempts, accepted=accepted,
            aborted=0, rethink_thoughts=0, code_actions_accepted=0,
            tool_invocations=0,
        )
    assert data_utilization(stats(1000, 683)) == pytest.approx(0.683)
    assert data_utilization(stats(10, 0)) == 0.0
    assert data_utilization(stats(10, 10)) == 1.0
    with pytest.raises(ValueError):
        data_utilization(stats(0, 0))


def accepted_workflow(task_id, code_count):
    actions = []
    feedbacks = []
    for i in range(code_count):
        actions.append(Action(i + 1, ActionKind.CODE, f"x{i} = {i}"))
        feedbacks.append(Feedback.from_payload(i + 1, ""))
    actions.append(Action(code_count + 1, ActionKind.DONE, ""))
    return Workflow(
        task_id=task_id, actions=tuple(actions), feedbacks=tuple(feedbacks),
        flags=None, prediction="x", accepted=True,
        generation_mode=GenerationMode.STANDARD,
    )


def test_tool_use_stats_exact_mean():
    dataset = WorkflowDataset(
        workflows=(accepted_workflow("a", 1), accepted_workflow("b", 3)),
        provenance=Provenance("standard", "0" * 64, 0),
    )
    assert tool_use_stats(dataset) == 2.0


def test_tool_use_stats_empty_dataset():
    dataset = WorkflowDataset(
        workflows=(), provenance=Provenance("standard", "0" * 64, 0)
    )
    with pytest.raises(ValueError):
        tool_use_stats(dataset)
