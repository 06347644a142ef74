import numpy as np
import pytest

from socdiff.geometry import Aabb, RobotModel
from socdiff.world import Scene


def random_scene(rng, n_min=1, n_max=5) -> Scene:
    boxes = []
    for _ in range(int(rng.integers(n_min, n_max + 1))):
        c = rng.uniform(-0.7, 0.7, 2)
        h = rng.uniform(0.05, 0.3, 2)
        boxes.append(Aabb(tuple(np.maximum(c - h, -1.0)), tuple(np.minimum(c + h, 1.0))))
    return Scene(tuple(boxes), scene_type="Clutter")


@pytest.fixture
def point():
    return RobotModel.point(0.05)


@pytest.fixture
def arm():
    return RobotModel.arm((0.4, 0.35, 0.25), half_width=0.03)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
