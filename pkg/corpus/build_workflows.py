"""Writes the reviewed workflow corpus: workflows.jsonl + human_flags.json.

Every workflow below was composed and labeled by hand. The JSON labels
record what a reader judged, independently of the automatic rules:

  flags                    per-action effectiveness, 0 = ineffective
  reconsidered_actions     actions whose outcome a later thought walked back
  reconsideration_thoughts the thoughts doing that walking back

The mix is deliberate: every execution fault is labeled ineffective; half
of the walk-back thoughts use wording the keyword rule looks for and half
do not; most but not all are written in the two-part discrepancy format.

Run from the repository root:  python3 corpus/build_workflows.py
"""

from __future__ import annotations

import json
from pathlib import Path

from maskflow.model import Action, ActionKind, Feedback, GenerationMode, Workflow
from maskflow.records import canonical_line, workflow_to_record

OUT_DIR = Path(__file__).resolve().parent

TB = "Traceback (most recent call last):"


def th(index: int, text: str, rethink: bool = False) -> Action:
    return Action(index, ActionKind.THOUGHT, text, is_rethink=rethink)


def code(index: int, source: str) -> Action:
    return Action(index, ActionKind.CODE, source)


def done(index: int) -> Action:
    return Action(index, ActionKind.DONE, "")


def fb(index: int, payload: str) -> Feedback:
    return Feedback.from_payload(index, payload)


def err(index: int, line: int, kind: str, message: str) -> Feedback:
    payload = f'{TB}\n  File "<program>", line {line}\n{kind}: {message}'
    return Feedback.from_payload(index, payload)


def wf(task_id, actions, feedbacks, prediction, accepted,
       mode=GenerationMode.DISCREPANCY_AWARE, abort=None):
    return Workflow(
        task_id=task_id,
        actions=tuple(actions),
        feedbacks=tuple(feedbacks),
        flags=None,
        prediction=prediction,
        accepted=accepted,
        generation_mode=mode,
        abort_reason=abort,
    )


ENTRIES = []  # (workflow, human_flags, reconsidered_actions, reconsideration_thoughts)


def add(workflow, flags, reconsidered=(), thoughts=()):
    ENTRIES.append((workflow, list(flags), list(reconsidered), list(thoughts)))


# ------------------------------------------------------------
# Clean runs: every action did its job.
# ------------------------------------------------------------

add(wf(
    "wf-a01",
    [
        th(1, "A count is wanted; find lists every chair and count measures "
              "the list."),
        code(2, 'chairs = find("chair")\nfinal_answer = count(chairs)\nfinal_answer'),
        done(3),
    ],
    [fb(2, "2")],
    "2", True, GenerationMode.STANDARD,
), [1, 1, 1])

add(wf(
    "wf-a02",
    [
        code(1, 'final_answer = bool_to_yesno(exists("dog"))\nfinal_answer'),
        done(2),
    ],
    [fb(1, "yes")],
    "yes", True, GenerationMode.SINGLE_TURN,
), [1, 1])

add(wf(
    "wf-a03",
    [
        th(1, "Only one mug is in view, so a direct question should settle "
              "its color."),
        code(2, 'final_answer = simple_query("What color is the mug?")\nfinal_answer'),
        done(3),
    ],
    [fb(2, "blue")],
    "blue", True, GenerationMode.STANDARD,
), [1, 1, 1])

add(wf(
    "wf-a04",
    [
        code(1, 'final_answer = simple_query("Which is further left, the chair '
                'or the lamp?")\nfinal_answer'),
        done(2),
    ],
    [fb(1, "chair")],
    "chair", True, GenerationMode.STANDARD,
), [1, 1])

add(wf(
    "wf-a05",
    [
        th(1, "Compare the two counts directly; tally cars first, then trees."),
        code(2, 'cars = count(find("car"))\ncars'),
        code(3, 'trees = count(find("tree"))\n'
                "final_answer = bool_to_yesno(cars > trees)\nfinal_answer"),
        done(4),
    ],
    [fb(2, "3"), fb(3, "yes")],
    "yes", True, GenerationMode.STANDARD,
), [1, 1, 1, 1])

add(wf(
    "wf-a06",
    [
        th(1, "The cover is unreadable in the image; outside knowledge has "
              "to supply the author."),
        code(2, 'final_answer = llm_query("Who wrote Moby-Dick?")\nfinal_answer'),
        done(3),
    ],
    [fb(2, "herman melville")],
    "herman melville", True, GenerationMode.STANDARD,
), [1, 1, 1])

add(wf(
    "wf-a07",
    [
        code(1, 'corner = crop(0, 0, 256, 256)\nlamps = find("lamp", corner)\n'
                "final_answer = count(lamps)\nfinal_answer"),
        done(2),
    ],
    [fb(1, "1")],
    "1", True, GenerationMode.STANDARD,
), [1, 1])

add(wf(
    "wf-a08",
    [
        code(1, 'is_red = verify_property("ball", "red")\n'
                "final_answer = bool_to_yesno(is_red)\nfinal_answer"),
        done(2),
    ],
    [fb(1, "no")],
    "no", True, GenerationMode.STANDARD,
), [1, 1])

add(wf(
    "wf-a09",
    [
        th(1, "Books may sit on both desks; scan the whole scene before "
              "narrowing to a region."),
        code(2, 'books = find("book")\nbooks'),
        code(3, "final_answer = count(books)\nfinal_answer"),
        done(4),
    ],
    [fb(2, "[book#1(bbox=(35,40,150,120)), book#2(bbox=(210,44,330,128))]"),
     fb(3, "2")],
    "2", True, GenerationMode.STANDARD,
), [1, 1, 1, 1])

add(wf(
    "wf-a10",
    [
        code(1, 'final_answer = best_description_from_options("table", '
                '["small", "large"])\nfinal_answer'),
        done(2),
    ],
    [fb(1, "large")],
    "large", True, GenerationMode.STANDARD,
), [1, 1])

# ------------------------------------------------------------
# Faulted first attempt, two-part walk-back, recovery.
# The first three walk-backs use the keyword wording; the next
# three avoid it.
# ------------------------------------------------------------

add(wf(
    "wf-b01",
    [
        code(1, 'total = count(find("mug"))\nfinal_answer = total\nfinal_answr'),
        th(2, "Discrepancy: However, step 1 crashed with a NameError instead "
              "of reporting the count. I should rethink the spelling on the "
              "echo line.\n"
              "Next: Rerun the tally and echo final_answer exactly.",
           rethink=True),
        code(3, 'mug_total = count(find("mug"))\nfinal_answer = mug_total\n'
                "final_answer"),
        done(4),
    ],
    [err(1, 3, "NameError", "name 'final_answr' is not defined"), fb(3, "2")],
    "2", True,
), [0, 0, 1, 1], reconsidered=[1], thoughts=[2])

add(wf(
    "wf-b02",
    [
        code(1, 'final_answer = size_of("table")\nfinal_answer'),
        th(2, "Discrepancy: However, there is no tool called size_of, so "
              "step 1 faulted before measuring anything. Time to rethink "
              "the tool choice.\n"
              "Next: Pick between the two size options instead.",
           rethink=True),
        code(3, 'final_answer = best_description_from_options("table", '
                '["small", "large"])\nfinal_answer'),
        done(4),
    ],
    [err(1, 1, "UnknownBuiltin", "size_of"), fb(3, "small")],
    "small", True,
), [0, 0, 1, 1], reconsidered=[1], thoughts=[2])

add(wf(
    "wf-b03",
    [
        code(1, 'spotted = exists("cat")\nfinal_answer = bool_to_yesno(spotted)\n'
                "final_answer"),
        th(2, "Discrepancy: However, the existence check is not enabled in "
              "this library, so step 1 threw instead of answering. I will "
              "rethink the route.\n"
              "Next: Detect cats directly and test whether the list is empty.",
           rethink=True),
        code(3, 'cats = find("cat")\nfinal_answer = bool_to_yesno(count(cats) > 0)\n'
                "final_answer"),
        done(4),
    ],
    [err(1, 1, "ToolUnavailable", "exists is not enabled in this library"),
     fb(3, "no")],
    "no", True,
), [0, 0, 1, 1], reconsidered=[1], thoughts=[2])

add(wf(
    "wf-b04",
    [
        code(1, 'final_answer = bool_to_yesno(count(find("ball")))\nfinal_answer'),
        th(2, "Discrepancy: step 1 passed a number where a truth value was "
              "required, so the conversion faulted.\n"
              "Next: Compare the count against zero first, then convert.",
           rethink=True),
        code(3, 'balls = count(find("ball"))\n'
                "final_answer = bool_to_yesno(balls > 0)\nfinal_answer"),
        done(4),
    ],
    [err(1, 1, "TypeFault", "bool_to_yesno expects True or False"), fb(3, "yes")],
    "yes", True,
), [0, 0, 1, 1], reconsidered=[1], thoughts=[2])

add(wf(
    "wf-b05",
    [
        code(1, "import math\nfinal_answer = math.hypot(3, 4)"),
        th(2, "Discrepancy: the language here has no import statement, so "
              "step 1 never ran.\n"
              "Next: Stay inside the provided calls; the question only needs "
              "a count.",
           rethink=True),
        code(3, 'final_answer = count(find("chair"))\nfinal_answer'),
        done(4),
    ],
    [err(1, 1, "SyntaxError", "unexpected trailing tokens (line 1, column 8)"),
     fb(3, "4")],
    "4", True,
), [0, 0, 1, 1], reconsidered=[1], thoughts=[2])

add(wf(
    "wf-b06",
    [
        code(1, 'final_answer = count(stuff)\nfinal_answer'),
        th(2, "Discrepancy: step 1 referenced a name that was never assigned, "
              "so the tally faulted.\n"
              "Next: Build the list with find before counting it.",
           rethink=True),
        code(3, 'stuff = find("lamp")\nfinal_answer = count(stuff)\nfinal_answer'),
        done(4),
    ],
    [err(1, 1, "NameError", "name 'stuff' is not defined"), fb(3, "1")],
    "1", True,
), [0, 0, 1, 1], reconsidered=[1], thoughts=[2])

# ------------------------------------------------------------
# Silent wrong value, walk-back, recovery. Again three keyword
# wordings, then three without.
# ------------------------------------------------------------

add(wf(
    "wf-c01",
    [
        code(1, 'final_answer = simple_query("How many books are there?")\n'
                "final_answer"),
        th(2, "Discrepancy: However, the stack on the desk plainly holds "
              "more than zero books, so this zero cannot stand. I should "
              "rethink the counting route.\n"
              "Next: Detect the books explicitly and count the list.",
           rethink=True),
        code(3, 'books = find("book")\nfinal_answer = count(books)\nfinal_answer'),
        done(4),
    ],
    [fb(1, "0"), fb(3, "3")],
    "3", True,
), [0, 0, 1, 1], reconsidered=[1], thoughts=[2])

add(wf(
    "wf-c02",
    [
        code(1, 'final_answer = bool_to_yesno(exists("tree"))\nfinal_answer'),
        th(2, "Discrepancy: However, a tree is clearly standing by the window, "
              "so this answer contradicts the scene. Let me rethink it.\n"
              "Next: Detect trees and test the count instead.",
           rethink=True),
        code(3, 'trees = find("tree")\nfinal_answer = bool_to_yesno('
                "count(trees) > 0)\nfinal_answer"),
        done(4),
    ],
    [fb(1, "no"), fb(3, "yes")],
    "yes", True,
), [0, 0, 1, 1], reconsidered=[1], thoughts=[2])

add(wf(
    "wf-c03",
    [
        code(1, 'final_answer = simple_query("What color is the chair?")\n'
                "final_answer"),
        th(2, "Discrepancy: However, green conflicts with the white seat "
              "visible beside the desk; I need to rethink this reading.\n"
              "Next: Choose among the palette options directly.",
           rethink=True),
        code(3, 'final_answer = best_description_from_options("chair", '
                '["red", "blue", "green", "yellow", "black", "white"])\n'
                "final_answer"),
        done(4),
    ],
    [fb(1, "green"), fb(3, "white")],
    "white", True,
), [0, 0, 1, 1], reconsidered=[1], thoughts=[2])

add(wf(
    "wf-c04",
    [
        code(1, 'final_answer = simple_query("Which is further left, the table '
                'or the lamp?")\nfinal_answer'),
        th(2, "Discrepancy: the crop from earlier placed the table's box at "
              "the left margin, which contradicts this reply.\n"
              "Next: Pose the question once more and trust the box geometry.",
           rethink=True),
        code(3, 'second_pass = simple_query("Which is further left, the table '
                'or the lamp?")\nfinal_answer = second_pass\nfinal_answer'),
        done(4),
    ],
    [fb(1, "lamp"), fb(3, "table")],
    "table", True,
), [0, 0, 1, 1], reconsidered=[1], thoughts=[2])

add(wf(
    "wf-c05",
    [
        code(1, 'final_answer = simple_query("Are there more mugs than books?")\n'
                "final_answer"),
        th(2, "Discrepancy: two mugs against one book makes this answer "
              "inconsistent with the shelf.\n"
              "Next: Count each category and compare the tallies.",
           rethink=True),
        code(3, 'mugs = count(find("mug"))\nbooks = count(find("book"))\n'
                "final_answer = bool_to_yesno(mugs > books)\nfinal_answer"),
        done(4),
    ],
    [fb(1, "no"), fb(3, "yes")],
    "yes", True,
), [0, 0, 1, 1], reconsidered=[1], thoughts=[2])

add(wf(
    "wf-c06",
    [
        code(1, 'final_answer = simple_query("How many chairs are there?")\n'
                "final_answer"),
        th(2, "Discrepancy: five exceeds the seats around a two-person desk; "
              "the reply disagrees with the layout.\n"
              "Next: Count detections inside the full frame instead.",
           rethink=True),
        code(3, 'seats = find("chair")\nfinal_answer = count(seats)\nfinal_answer'),
        done(4),
    ],
    [fb(1, "5"), fb(3, "4")],
    "4", True,
), [0, 0, 1, 1], reconsidered=[1], thoughts=[2])

# ------------------------------------------------------------
# Walk-backs written as ordinary prose, not the two-part form.
# One carries the keyword wording, one does not, and one uses
# the keyword innocently with nothing being walked back.
# ------------------------------------------------------------

add(wf(
    "wf-d01",
    [
        th(1, "Count the cups by asking directly."),
        code(2, 'final_answer = simple_query("How many cups are there?")\n'
                "final_answer"),
        th(3, "However, a count of zero conflicts with the two cups plainly "
              "on the desk; this step needs a redo."),
        code(4, 'cups = find("cup")\nfinal_answer = count(cups)\nfinal_answer'),
        done(5),
    ],
    [fb(2, "0"), fb(4, "2")],
    "2", True,
), [1, 0, 0, 1, 1], reconsidered=[2], thoughts=[3])

add(wf(
    "wf-d02",
    [
        code(1, 'lamps = find("lamp", crop(0, 0, 128, 128))\n'
                "final_answer = count(lamps)\nfinal_answer"),
        th(2, "Wait - the corner crop clearly showed a lamp shade, so an "
              "empty tally cannot be right. Trying the full frame instead."),
        code(3, 'all_lamps = find("lamp")\nfinal_answer = count(all_lamps)\n'
                "final_answer"),
        done(4),
    ],
    [fb(1, "0"), fb(3, "1")],
    "1", True,
), [0, 0, 1, 1], reconsidered=[1], thoughts=[2])

add(wf(
    "wf-d03",
    [
        th(1, "One mug sits apart from the clutter; count it directly."),
        code(2, 'final_answer = count(find("mug"))\nfinal_answer'),
        th(3, "The scene is busy; however, the mug stands alone on the left, "
              "so this tally is trustworthy."),
        done(4),
    ],
    [fb(2, "1")],
    "1", True,
), [1, 1, 1, 1])

# ------------------------------------------------------------
# Rejected runs: faults or wrong answers that never recovered.
# ------------------------------------------------------------

add(wf(
    "wf-e01",
    [
        th(1, "The bottle should be verifiable in one property check."),
        code(2, 'final_answer = verify_property("bottle")\nfinal_answer'),
    ],
    [err(2, 1, "TypeFault", "verify_property expects (name, property)")],
    None, False, GenerationMode.STANDARD,
), [1, 0])

add(wf(
    "wf-e02",
    [
        code(1, 'final_answer = simple_query("How many trees are there?")\n'
                "final_answer"),
        done(2),
    ],
    [fb(1, "1")],
    "1", False, GenerationMode.STANDARD,
), [0, 1])

add(wf(
    "wf-e03",
    [
        th(1, "Try the detector on the carpet region first."),
        code(2, 'rugs = find("rug")\nfinal_answer = count(rugs)\nfinal_answer'),
        th(3, "The fault says detection is switched off in this library, so "
              "the count cannot be completed here."),
    ],
    [err(2, 1, "ToolUnavailable", "find is not enabled in this library")],
    None, False, GenerationMode.STANDARD,
), [1, 0, 1])

add(wf(
    "wf-e04",
    [
        code(1, 'shelf = crop(256, 0, 512, 256)\nshelf'),
        code(2, 'final_answer = count(find("book", shelf list))\nfinal_answer'),
        done(3),
    ],
    [fb(1, "region(256,0,512,256)"),
     err(2, 1, "SyntaxError", "expected ',' or ')' in call (line 1, column 41)")],
    None, False, GenerationMode.STANDARD,
), [1, 0, 1])

# ------------------------------------------------------------
# Fault fixed without any written reflection in between.
# ------------------------------------------------------------

add(wf(
    "wf-f01",
    [
        code(1, 'final_answer = count("chair")\nfinal_answer'),
        code(2, 'final_answer = count(find("chair"))\nfinal_answer'),
        done(3),
    ],
    [err(1, 1, "TypeFault", "count expects a list"), fb(2, "2")],
    "2", True, GenerationMode.STANDARD,
), [0, 1, 1])

add(wf(
    "wf-f02",
    [
        th(1, "One comparison settles whether the dog is left of the cat."),
        code(2, 'left_one = simple_query("Which is further left, the dog or '
                'the cat?"\nfinal_answer = left_one'),
        code(3, 'leftmost = simple_query("Which is further left, the dog or '
                'the cat?")\nfinal_answer = leftmost\nfinal_answer'),
        done(4),
    ],
    [err(2, 1, "SyntaxError", "unexpected end of line (line 1, column 25)"),
     fb(3, "dog")],
    "dog", True, GenerationMode.STANDARD,
), [1, 0, 1, 1])


def main() -> None:
    lines = []
    labels = {}
    for workflow, flags, reconsidered, thoughts in ENTRIES:
        assert len(flags) == len(workflow.actions), workflow.task_id
        lines.append(canonical_line(workflow_to_record(workflow)))
        labels[workflow.task_id] = {
            "flags": flags,
            "reconsidered_actions": reconsidered,
            "reconsideration_thoughts": thoughts,
        }
    (OUT_DIR / "workflows.jsonl").write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )
    (OUT_DIR / "human_flags.json").write_text(
        json.dumps(labels, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(lines)} workflows")


if __name__ == "__main__":
    main()
