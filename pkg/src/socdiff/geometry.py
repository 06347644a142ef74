"""Planar geometry: axis-aligned boxes, robot kinematics and body boxes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class GeometryError(ValueError):
    """Raised for invalid boxes, robots or configurations."""


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box in the plane. ``lo``/``hi`` are (x, y) corners in meters."""

    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 2 or len(hi) != 2:
            raise GeometryError(f"Aabb corners must be 2-vectors, got {lo}, {hi}")
        if not all(np.isfinite(lo + hi)):
            raise GeometryError(f"non-finite Aabb corners {lo}, {hi}")
        if lo[0] > hi[0] or lo[1] > hi[1]:
            raise GeometryError(f"invalid Aabb: lo={lo} exceeds hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_center(cls, center, half_extent) -> "Aabb":
        c = np.asarray(center, dtype=float)
        h = np.broadcast_to(np.asarray(half_extent, dtype=float), (2,))
        return cls(tuple(c - h), tuple(c + h))

    @property
    def area(self) -> float:
        return (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    def contains(self, other: "Aabb") -> bool:
        return all(self.lo[i] <= other.lo[i] and other.hi[i] <= self.hi[i] for i in range(2))


def overlap_volume(a: Aabb, b: Aabb) -> float:
    """Area of the intersection of two boxes (0 when they are disjoint or only touch)."""
    out = 1.0
    for i in range(2):
        out *= max(0.0, min(a.hi[i], b.hi[i]) - max(a.lo[i], b.lo[i]))
    return out


def inflate(a: Aabb, margin: float) -> Aabb:
    """Grow a box by ``margin`` on every side. Negative margins shrink it."""
    lo = (a.lo[0] - margin, a.lo[1] - margin)
    hi = (a.hi[0] + margin, a.hi[1] + margin)
    if lo[0] > hi[0] or lo[1] > hi[1]:
        raise GeometryError(f"margin {margin} collapses box {a}")
    return Aabb(lo, hi)


def boxes_to_arrays(boxes: Sequence[Aabb]) -> tuple[np.ndarray, np.ndarray]:
    """Stack boxes into ``(n, 2)`` lo and hi arrays."""
    if len(boxes) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2))
    lo = np.array([b.lo for b in boxes], dtype=float)
    hi = np.array([b.hi for b in boxes], dtype=float)
    return lo, hi


POINT = "point"
ARM = "arm"


@dataclass(frozen=True)
class RobotModel:
    """A planar robot: a square point robot or a serial arm of revolute joints.

    ``limits`` are per-dimension configuration bounds; diffusion runs in the
    normalized space obtained by mapping them linearly onto [-1, 1].
    """

    kind: str = POINT
    link_lengths: tuple[float, ...] = ()
    link_half_width: float = 0.05
    base: tuple[float, float] = (0.0, 0.0)
    limits: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.kind not in (POINT, ARM):
            raise GeometryError(f"unknown robot kind {self.kind!r}")
        object.__setattr__(self, "link_lengths", tuple(float(v) for v in self.link_lengths))
        object.__setattr__(self, "base", tuple(float(v) for v in self.base))
        if self.link_half_width <= 0:
            raise GeometryError("link_half_width must be positive")
        if self.kind == ARM:
            if len(self.link_lengths) < 1:
                raise GeometryError("an arm needs at least one link")
            if any(l <= 0 for l in self.link_lengths):
                raise GeometryError("link lengths must be positive")
        limits = self.limits
        if limits is None:
            bound = 1.0 if self.kind == POINT else np.pi
            limits = tuple((-bound, bound) for _ in range(self.config_dim))
        limits = tuple((float(lo), float(hi)) for lo, hi in limits)
        if len(limits) != self.config_dim or any(hi <= lo for lo, hi in limits):
            raise GeometryError(f"bad limits {limits} for config_dim {self.config_dim}")
        object.__setattr__(self, "limits", limits)

    @classmethod
    def point(cls, half_width: float = 0.05) -> "RobotModel":
        return cls(POINT, (), half_width)

    @classmethod
    def arm(cls, link_lengths, half_width: float = 0.03, base=(0.0, 0.0)) -> "RobotModel":
        return cls(ARM, tuple(link_lengths), half_width, tuple(base))

    @property
    def config_dim(self) -> int:
        return 2 if self.kind == POINT else len(self.link_lengths)

    @property
    def n_bodies(self) -> int:
        return 1 if self.kind == POINT else len(self.link_lengths)

    @property
    def _center(self) -> np.ndarray:
        return np.array([0.5 * (lo + hi) for lo, hi in self.limits])

    @property
    def _half_range(self) -> np.ndarray:
        return np.array([0.5 * (hi - lo) for lo, hi in self.limits])

    def normalize(self, q) -> np.ndarray:
        """Configuration units -> [-1, 1] diffusion space."""
        return (np.asarray(q, dtype=float) - self._center) / self._half_range

    def denormalize(self, x) -> np.ndarray:
        """Diffusion space -> configuration units."""
        return np.asarray(x, dtype=float) * self._half_range + self._center

    @property
    def denormalize_scale(self) -> np.ndarray:
        """d(config)/d(normalized) per dimension."""
        return self._half_range

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "link_lengths": list(self.link_lengths),
            "link_half_width": self.link_half_width,
            "base": list(self.base),
            "limits": [list(l) for l in self.limits],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RobotModel":
        return cls(
            d["kind"],
            tuple(d.get("link_lengths", ())),
            float(d["link_half_width"]),
            tuple(d.get("base", (0.0, 0.0))),
            tuple(tuple(l) for l in d["limits"]) if d.get("limits") else None,
        )


def _check_config(robot: RobotModel, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != robot.config_dim:
        raise GeometryError(f"configuration has dimension {q.shape[-1]}, robot expects {robot.config_dim}")
    return q


def forward_kinematics(robot: RobotModel, q) -> np.ndarray:
    """Joint/endpoint positions, shape ``(..., n_points, 2)``.

    A point robot returns its single position; an arm returns the base
    followed by the end of every link.
    """
    q = _check_config(robot, q)
    if robot.kind == POINT:
        return q[..., None, :].copy()
    theta = np.cumsum(q, axis=-1)
    lengths = np.asarray(robot.link_lengths)
    steps = np.stack([np.cos(theta), np.sin(theta)], axis=-1) * lengths[:, None]
    base = np.broadcast_to(np.asarray(robot.base), steps.shape[:-2] + (1, 2))
    return np.concatenate([base, base + np.cumsum(steps, axis=-2)], axis=-2)


def body_boxes(robot: RobotModel, q) -> list[Aabb]:
    """The robot's collision boxes at a single configuration."""
    q = _check_config(robot, q)
    if q.ndim != 1:
        raise GeometryError("body_boxes takes a single configuration")
    pts = forward_kinematics(robot, q)
    h = robot.link_half_width
    if robot.kind == POINT:
        return [Aabb.from_center(pts[0], h)]
    lo = np.minimum(pts[:-1], pts[1:]) - h
    hi = np.maximum(pts[:-1], pts[1:]) + h
    return [Aabb(tuple(l), tuple(u)) for l, u in zip(lo, hi)]


def segments_intersect(p1, p2, p3, p4) -> bool:
    """Closed segment intersection test for p1-p2 against p3-p4."""
    p1, p2, p3, p4 = (np.asarray(p, dtype=float) for p in (p1, p2, p3, p4))

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_segment(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    return (
        (d1 == 0 and on_segment(p3, p4, p1))
        or (d2 == 0 and on_segment(p3, p4, p2))
        or (d3 == 0 and on_segment(p1, p2, p3))
        or (d4 == 0 and on_segment(p1, p2, p4))
    )


def self_collides(robot: RobotModel, q) -> bool:
    """Planar self-collision: any two non-adjacent links crossing."""
    if robot.kind == POINT or robot.n_bodies < 3:
        return False
    pts = forward_kinematics(robot, q)
    n = robot.n_bodies
    for i in range(n):
        for j in range(i + 2, n):
            if segments_intersect(pts[i], pts[i + 1], pts[j], pts[j + 1]):
                return True
    return False
