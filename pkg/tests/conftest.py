"""Shared fixtures: a small hand-built scene with known ground truth."""

from pathlib import Path

import pytest

from maskflow.simenv import EnvironmentConfig, Scene, SceneObject

REPO_ROOT = Path(__file__).resolve().parents[1]
PROGRAM_DIR = REPO_ROOT / "corpus" / "programs"
WORKFLOW_CORPUS = REPO_ROOT / "corpus" / "workflows.jsonl"
HUMAN_FLAGS = REPO_ROOT / "corpus" / "human_flags.json"


def make_fixture_scene() -> Scene:
    """Two chairs (one left, one right), one red dog, one blue mug."""
    return Scene(
        scene_id="scene-fixture",
        objects=(
            SceneObject("chair", {"color": "black", "size": "large"}, (40, 60, 140, 200)),
            SceneObject("chair", {"color": "white", "size": "small"}, (300, 80, 380, 180)),
            SceneObject("dog", {"color": "red", "size": "small"}, (180, 300, 260, 380)),
            SceneObject("mug", {"color": "blue", "size": "small"}, (420, 400, 470, 450)),
        ),
    )


def make_fixture_config() -> EnvironmentConfig:
    return EnvironmentConfig()


@pytest.fixture
def fixture_scene() -> Scene:
    return make_fixture_scene()


@pytest.fixture
def fixture_config() -> EnvironmentConfig:
    return EnvironmentConfig()
