"""Versioned JSON text formats for scenes, problems, suites and trajectories.

Every document is a JSON object with ``format`` and integer ``version``
keys.  Floats are written with Python's shortest round-trip repr, so a
write/read cycle reproduces every value bit for bit.  The grammar of each
document type is described in ``docs/formats.md``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import Aabb, RobotModel
from .world import BenchmarkSuite, Problem, Scene

VERSION = 1


class FormatError(ValueError):
    """Malformed file content."""


class VersionError(FormatError):
    """Well-formed file with an unsupported schema version."""


def parse_json(text: str, source: str = "<string>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def dumps(doc) -> str:
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def _header(kind: str) -> dict:
    return {"format": f"socdiff-{kind}", "version": VERSION}


def _check(doc, kind: str, source: str):
    if not isinstance(doc, dict):
        raise FormatError(f"{source}: expected a JSON object")
    if doc.get("format") != f"socdiff-{kind}":
        raise FormatError(f"{source}: expected format 'socdiff-{kind}', found {doc.get('format')!r}")
    if doc.get("version") != VERSION:
        raise VersionError(f"{source}: unsupported version {doc.get('version')!r} (reader supports {VERSION})")


# -- value <-> dict ---------------------------------------------------------

def _box_to(b: Aabb) -> list:
    return [list(b.lo), list(b.hi)]


def _box_from(v) -> Aabb:
    return Aabb(tuple(v[0]), tuple(v[1]))


def scene_to_dict(scene: Scene) -> dict:
    return {"scene_type": scene.scene_type, "bounds": _box_to(scene.bounds),
            "obstacles": [_box_to(o) for o in scene.obstacles]}


def scene_from_dict(d: dict) -> Scene:
    return Scene(tuple(_box_from(o) for o in d["obstacles"]), _box_from(d["bounds"]), d["scene_type"])


def problem_to_dict(p: Problem) -> dict:
    return {"q_start": list(p.q_start), "q_goal": list(p.q_goal), "scene": scene_to_dict(p.scene)}


def problem_from_dict(d: dict) -> Problem:
    return Problem(tuple(d["q_start"]), tuple(d["q_goal"]), scene_from_dict(d["scene"]))


def _decode(source, fn, d):
    try:
        return fn(d)
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{source}: malformed content: {exc!r}") from exc


# -- public readers / writers ----------------------------------------------

def dumps_scene(scene: Scene) -> str:
    return dumps({**_header("scene"), **scene_to_dict(scene)})


def loads_scene(text: str, source: str = "<string>") -> Scene:
    doc = parse_json(text, source)
    _check(doc, "scene", source)
    return _decode(source, scene_from_dict, doc)


def dumps_problem(problem: Problem) -> str:
    return dumps({**_header("problem"), **problem_to_dict(problem)})


def loads_problem(text: str, source: str = "<string>") -> Problem:
    doc = parse_json(text, source)
    _check(doc, "problem", source)
    return _decode(source, problem_from_dict, doc)


def dumps_suite(suite: BenchmarkSuite) -> str:
    doc = {**_header("suite"), "seed": suite.seed, "per_type": dict(suite.per_type),
           "robot": suite.robot.to_dict(), "problems": [problem_to_dict(p) for p in suite.problems]}
    return dumps(doc)


def loads_suite(text: str, source: str = "<string>") -> BenchmarkSuite:
    doc = parse_json(text, source)
    _check(doc, "suite", source)

    def build(d):
        return BenchmarkSuite([problem_from_dict(p) for p in d["problems"]], int(d["seed"]),
                              {k: int(v) for k, v in d["per_type"].items()}, RobotModel.from_dict(d["robot"]))

    return _decode(source, build, doc)


def dumps_trajectory(traj) -> str:
    traj = np.asarray(traj, dtype=float)
    return dumps({**_header("trajectory"), "waypoints": [[float(x) for x in row] for row in traj]})


def loads_trajectory(text: str, source: str = "<string>") -> np.ndarray:
    doc = parse_json(text, source)
    _check(doc, "trajectory", source)

    def build(d):
        arr = np.asarray(d["waypoints"], dtype=float)
        if arr.ndim != 2:
            raise FormatError(f"{source}: waypoints must be a list of equal-length rows")
        return arr

    return _decode(source, build, doc)


def write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def _reader(loads):
    def read(path):
        return loads(Path(path).read_text(), str(path))
    return read


def _writer(dumps_fn):
    def write(path, value):
        write_text(path, dumps_fn(value))
    return write


read_scene, write_scene = _reader(loads_scene), _writer(dumps_scene)
read_problem, write_problem = _reader(loads_problem), _writer(dumps_problem)
read_suite, write_suite = _reader(loads_suite), _writer(dumps_suite)
read_trajectory, write_trajectory = _reader(loads_trajectory), _writer(dumps_trajectory)


def write_dataset(path, trajs: np.ndarray) -> None:
    """Training sets are stored as a plain ``.npy`` array of shape (N, L, D)."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.save(fh, np.asarray(trajs, dtype=float), allow_pickle=False)


def read_dataset(path) -> np.ndarray:
    try:
        arr = np.load(path, allow_pickle=False)
    except ValueError as exc:
        raise FormatError(f"{path}: not a dataset array: {exc}") from exc
    if arr.ndim != 3:
        raise FormatError(f"{path}: dataset must have shape (N, L, D), got {arr.shape}")
    return arr
