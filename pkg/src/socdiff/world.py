"""Synthetic planar scenes, planning problems and smooth training trajectories."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .costs import hard_overlap
from .geometry import ARM, Aabb, RobotModel, forward_kinematics, self_collides

SCENE_TYPES = ("Corridor", "Cubby", "Clutter", "Tabletop2D")
WORKSPACE = Aabb((-1.0, -1.0), (1.0, 1.0))


class GenerationError(RuntimeError):
    """Raised when rejection sampling exhausts its retry budget."""


@dataclass(frozen=True)
class Scene:
    obstacles: tuple[Aabb, ...] = ()
    bounds: Aabb = WORKSPACE
    scene_type: str = "Clutter"

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.scene_type not in SCENE_TYPES + ("Empty",):
            raise ValueError(f"unknown scene type {self.scene_type!r}")
        for o in self.obstacles:
            if not self.bounds.contains(o):
                raise ValueError(f"obstacle {o} outside scene bounds {self.bounds}")


@dataclass(frozen=True)
class Problem:
    q_start: tuple[float, ...]
    q_goal: tuple[float, ...]
    scene: Scene

    def __post_init__(self):
        object.__setattr__(self, "q_start", tuple(float(v) for v in self.q_start))
        object.__setattr__(self, "q_goal", tuple(float(v) for v in self.q_goal))
        if len(self.q_start) != len(self.q_goal):
            raise ValueError("start and goal dimensions differ")


@dataclass
class BenchmarkSuite:
    problems: list[Problem]
    seed: int
    per_type: dict[str, int] = field(default_factory=dict)
    robot: RobotModel = field(default_factory=RobotModel.point)

    def __len__(self):
        return len(self.problems)


def _box(rng, cx_range, cy_range, hx_range, hy_range, bounds=WORKSPACE) -> Aabb:
    c = np.array([rng.uniform(*cx_range), rng.uniform(*cy_range)])
    h = np.array([rng.uniform(*hx_range), rng.uniform(*hy_range)])
    lo = np.maximum(c - h, bounds.lo)
    hi = np.minimum(c + h, bounds.hi)
    return Aabb(tuple(lo), tuple(hi))


def _corridor(rng):
    x = rng.uniform(-0.3, 0.3)
    half_t = rng.uniform(0.05, 0.1)
    gap = rng.uniform(0.15, 0.4)
    gc = rng.uniform(-0.6, 0.6)
    walls = [Aabb((x - half_t, -1.0), (x + half_t, gc - gap / 2)),
             Aabb((x - half_t, gc + gap / 2), (x + half_t, 1.0))]
    left = Aabb((-1.0, -1.0), (x - half_t - 0.1, 1.0))
    right = Aabb((x + half_t + 0.1, -1.0), (1.0, 1.0))
    if rng.integers(0, 2):
        left, right = right, left
    return walls, {"start": left, "goal": right}


def _cubby(rng):
    rows, cols = int(rng.integers(2, 4)), int(rng.integers(1, 3))
    cell = rng.uniform(0.28, 0.36)
    wall = rng.uniform(0.03, 0.05)
    w, h = cols * cell, rows * cell
    x0 = rng.uniform(-0.9, 0.9 - w)
    y0 = rng.uniform(-0.9, 0.9 - h)
    opening = ("left", "right")[int(rng.integers(0, 2))]
    obs = []
    # shelves (horizontal plates) across the full width
    for r in range(rows + 1):
        y = y0 + r * cell
        obs.append((x0 - wall, y - wall, x0 + w + wall, y + wall))
    # back wall on the side opposite the opening
    xb = x0 + w if opening == "left" else x0
    obs.append((xb - wall, y0 - wall, xb + wall, y0 + h + wall))
    # vertical dividers between columns, stopping short of the shelves
    for c in range(1, cols):
        xd = x0 + c * cell
        for r in range(rows):
            obs.append((xd - wall, y0 + r * cell, xd + wall, y0 + (r + 1) * cell))
    boxes = []
    for lx, ly, hx, hy in obs:
        lo = np.maximum((lx, ly), WORKSPACE.lo)
        hi = np.minimum((hx, hy), WORKSPACE.hi)
        boxes.append(Aabb(tuple(lo), tuple(hi)))
    # the goal sits inside one cell
    r, c = int(rng.integers(0, rows)), int(rng.integers(0, cols))
    goal = Aabb((x0 + c * cell + wall, y0 + r * cell + wall), (x0 + (c + 1) * cell - wall, y0 + (r + 1) * cell - wall))
    return boxes, {"goal": goal}


def _clutter(rng):
    n = int(rng.integers(5, 13))
    return [_box(rng, (-0.75, 0.75), (-0.75, 0.75), (0.06, 0.18), (0.06, 0.18)) for _ in range(n)], {}


def _tabletop(rng):
    side = int(rng.integers(0, 4))
    thick = rng.uniform(0.15, 0.25)
    table = (-1.0, -1.0, 1.0, -1.0 + thick)
    objects = []
    n = int(rng.integers(2, 6))
    for _ in range(n):
        cx = rng.uniform(-0.85, 0.85)
        hw = rng.uniform(0.05, 0.15)
        height = rng.uniform(0.15, 0.6)
        objects.append((cx - hw, -1.0 + thick, cx + hw, -1.0 + thick + height))
    band = (-1.0, -1.0 + thick, 1.0, -1.0 + thick + 0.5)
    boxes = []
    for lx, ly, hx, hy in [table] + objects + [band]:
        corners = np.array([[lx, ly], [hx, hy]])
        # rotate the layout so the table sits on the chosen side
        for _ in range(side):
            corners = corners @ np.array([[0.0, 1.0], [-1.0, 0.0]])
        lo = np.clip(corners.min(0), -1.0, 1.0)
        hi = np.clip(corners.max(0), -1.0, 1.0)
        boxes.append(Aabb(tuple(lo), tuple(hi)))
    # start and goal both sit in the band just above the table, among the objects
    band_box = boxes.pop()
    return boxes, {"start": band_box, "goal": band_box}


_GENERATORS = {"Corridor": _corridor, "Cubby": _cubby, "Clutter": _clutter, "Tabletop2D": _tabletop}


def generate_scene_with_regions(scene_type: str, rng: np.random.Generator) -> tuple[Scene, dict]:
    """A scene plus the workspace regions its start/goal should come from (``"start"``, ``"goal"``; absent = anywhere)."""
    if scene_type not in _GENERATORS:
        raise ValueError(f"unknown scene type {scene_type!r}; expected one of {SCENE_TYPES}")
    boxes, regions = _GENERATORS[scene_type](rng)
    return Scene(tuple(boxes), WORKSPACE, scene_type), regions


def generate_scene(scene_type: str, rng: np.random.Generator) -> Scene:
    return generate_scene_with_regions(scene_type, rng)[0]


def config_is_free(scene: Scene, robot: RobotModel, q, clearance: float = 0.0) -> bool:
    q = np.asarray(q, dtype=float)
    if hard_overlap(scene, robot, q[None], margin=clearance)[0] > 0.0:
        return False
    return not self_collides(robot, q)


def _inside(box: Aabb, p) -> bool:
    return bool(np.all(p >= box.lo) and np.all(p <= box.hi))


def _workspace_point(robot: RobotModel, q) -> np.ndarray:
    return forward_kinematics(robot, q)[-1]


def generate_problem(scene: Scene, robot: RobotModel, rng: np.random.Generator,
                     min_separation: float = 0.5, clearance: float = 0.0, max_tries: int = 2000,
                     start_region: Aabb | None = None, goal_region: Aabb | None = None) -> Problem:
    """Rejection-sample a collision-free start/goal pair.

    ``min_separation`` is the minimum workspace distance between the start
    and goal as a fraction of the workspace diameter: the bounds' diagonal
    for a point robot, the reach disk (2 x total link length) for an arm,
    measured between end-effectors.
    Optional regions constrain where the start / goal (end-effector) lies.
    """
    lo = np.array([l for l, _ in robot.limits])
    hi = np.array([h for _, h in robot.limits])
    diag = float(np.linalg.norm(np.subtract(scene.bounds.hi, scene.bounds.lo)))
    if robot.kind == ARM:
        diag = min(diag, 2.0 * sum(robot.link_lengths))

    def sample_free(region):
        # a point robot samples its region directly; arms reject on the end-effector position
        if region is not None and robot.kind != ARM:
            box_lo, box_hi = np.maximum(lo, region.lo), np.minimum(hi, region.hi)
            if np.any(box_lo > box_hi):
                raise GenerationError("region lies outside the configuration limits")
        else:
            box_lo, box_hi = lo, hi
        for _ in range(max_tries):
            q = rng.uniform(box_lo, box_hi)
            if region is not None and not _inside(region, _workspace_point(robot, q)):
                continue
            if config_is_free(scene, robot, q, clearance):
                return q
        raise GenerationError(f"no free configuration found in {max_tries} tries")

    for _ in range(max_tries):
        qs = sample_free(start_region)
        qg = sample_free(goal_region)
        dist = np.linalg.norm(_workspace_point(robot, qs) - _workspace_point(robot, qg))
        if dist >= min_separation * diag:
            return Problem(tuple(qs), tuple(qg), scene)
    raise GenerationError(f"no start/goal pair with separation >= {min_separation} found")


def problem_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def generate_suite(robot: RobotModel, per_type: int, seed: int, scene_types=SCENE_TYPES,
                   min_separation: float = 0.5) -> BenchmarkSuite:
    """``per_type`` problems of each scene type; problem i uses seed (seed, i)."""
    if per_type < 1:
        raise ValueError("per_type must be >= 1")
    problems = []
    index = 0
    for scene_type in scene_types:
        for _ in range(per_type):
            rng = np.random.default_rng(problem_seed(seed, index))
            for _attempt in range(100):
                scene, regions = generate_scene_with_regions(scene_type, rng)
                try:
                    problems.append(generate_problem(scene, robot, rng, min_separation, max_tries=500,
                                                     start_region=regions.get("start"),
                                                     goal_region=regions.get("goal")))
                    break
                except GenerationError:
                    continue
            else:
                raise GenerationError(f"could not generate a {scene_type} problem for index {index}")
            index += 1
    return BenchmarkSuite(problems, int(seed), {t: per_type for t in scene_types}, robot)


def generate_training_set(robot: RobotModel, n: int, n_waypoints: int, rng: np.random.Generator,
                          spread: float = 0.35) -> np.ndarray:
    """``n`` smooth normalized trajectories, shape ``(n, n_waypoints, D)``.

    Each joins a random start and goal through 1-3 control points scattered
    around the straight line, interpolated with a cubic spline and
    resampled at uniform arc length.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    d = robot.config_dim
    out = np.empty((n, n_waypoints, d))
    dense = np.linspace(0.0, 1.0, 400)
    for i in range(n):
        start, goal = rng.uniform(-1, 1, d), rng.uniform(-1, 1, d)
        m = int(rng.integers(1, 4))
        s = np.linspace(0.0, 1.0, m + 2)
        ctrl = start + s[:, None] * (goal - start)
        ctrl[1:-1] += rng.normal(0.0, spread, (m, d))
        curve = CubicSpline(s, ctrl, axis=0)(dense)
        seg = np.linalg.norm(np.diff(curve, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        if arc[-1] <= 0:
            out[i] = start
            continue
        target = np.linspace(0.0, arc[-1], n_waypoints)
        out[i] = np.stack([np.interp(target, arc, curve[:, j]) for j in range(d)], axis=1)
    np.clip(out, -1.0, 1.0, out=out)
    return out


def mean_sq_second_diff(trajs) -> float:
    """Average squared second difference, a curvature proxy."""
    trajs = np.asarray(trajs)
    return float(np.mean(np.diff(trajs, n=2, axis=-2) ** 2))
