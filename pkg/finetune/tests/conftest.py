"""Shared fixtures: a small instruct-masking dataset in dwim/v1 form."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

FIXTURE = Path(__file__).resolve().parent / "data" / "samples.jsonl"

INSTRUCTION = "Regenerate the masked step exactly; do not proceed to the next step."
MASK = "<MASK_ACTION/>"


def fixture_records() -> list[dict]:
    with open(FIXTURE, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@pytest.fixture()
def fixture_path() -> Path:
    return FIXTURE
