import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from air.attention import AttentionMap
from air.scene_graph import BoundingBox, SceneGraph, SceneObject

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _ACCEPTANCE_RESULTS.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        mark = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"  {mark}  {name}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_map():
    # 2x2 grid used across the metric unit tests
    return AttentionMap(np.array([[1.0, 1.0], [1.0, 3.0]]), (2.0, 2.0))


@pytest.fixture
def two_cup_scene():
    return SceneGraph(
        "img0", 100, 100,
        (
            SceneObject("o0", "cup", frozenset({"red"}), BoundingBox(10, 10, 20, 20)),
            SceneObject("o1", "cup", frozenset({"blue"}), BoundingBox(60, 60, 20, 20)),
            SceneObject("o2", "plate", frozenset({"blue"}), BoundingBox(40, 10, 25, 25)),
        ),
    )
