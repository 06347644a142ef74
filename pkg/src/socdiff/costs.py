"""Sum-of-costs collision field: intersection-volume and swept-volume terms.

Every term is an overlap area between robot body boxes and margin-inflated
obstacle boxes, accumulated over waypoints (IV) or over points linearly
interpolated between consecutive waypoints (SV).  Overlaps use a C2 smooth
ramp in place of ``max(0, x)`` and smooth min/max for box corners, so the
gradient exists at contact boundaries.  The ramp is convex with slope in
[0, 1] and exact outside ``|x| < sqrt(smoothing_eps)``: penetrations deeper
than that give exactly the hard overlap area, gaps wider than it give zero.
A slope bounded by 1 keeps the smooth min/max monotone, so every term
grows with its margin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .geometry import ARM, POINT, GeometryError, RobotModel, boxes_to_arrays, inflate

N_IV = 5
N_SV = 7


@dataclass(frozen=True)
class CostParams:
    iv_margins: tuple[float, ...] = (0.0, 0.02, 0.05, 0.08, 0.12)
    sv_margins: tuple[float, ...] = (0.0, 0.0, 0.02, 0.02, 0.05, 0.08, 0.12)
    sv_subsamples: tuple[int, ...] = (2, 4, 2, 8, 4, 4, 8)
    smoothing_eps: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "iv_margins", tuple(float(m) for m in self.iv_margins))
        object.__setattr__(self, "sv_margins", tuple(float(m) for m in self.sv_margins))
        object.__setattr__(self, "sv_subsamples", tuple(int(n) for n in self.sv_subsamples))
        if len(self.iv_margins) != N_IV or len(self.sv_margins) != N_SV or len(self.sv_subsamples) != N_SV:
            raise ValueError(f"need {N_IV} IV margins and {N_SV} SV margins/subsamples")
        if min(self.iv_margins + self.sv_margins) < 0:
            raise ValueError("margins must be non-negative")
        if min(self.sv_subsamples) < 1:
            raise ValueError("subsamples must be >= 1")
        if not self.smoothing_eps > 0:
            raise ValueError("smoothing_eps must be positive")

    @property
    def blend(self) -> float:
        return math.sqrt(self.smoothing_eps)

    def to_dict(self) -> dict:
        return {
            "iv_margins": list(self.iv_margins),
            "sv_margins": list(self.sv_margins),
            "sv_subsamples": list(self.sv_subsamples),
            "smoothing_eps": self.smoothing_eps,
        }


@dataclass
class CostReport:
    iv_terms: np.ndarray
    sv_terms: np.ndarray
    total: float
    gradient: np.ndarray | None = None


def ramp(x: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """C2 convex smooth ``max(0, x)``: exact outside ``(-delta, delta)``.

    Inside, the slope is the cubic smoothstep of ``s = (x + delta) / (2 delta)``.
    Returns the value and its derivative.
    """
    x = np.asarray(x, dtype=float)
    val = np.maximum(x, 0.0)
    der = (x > 0.0).astype(float)
    zone = np.abs(x) < delta
    if zone.any():
        s = 0.5 * (x[zone] + delta) / delta
        s2 = s * s
        val[zone] = delta * s2 * s * (2.0 - s)
        der[zone] = s2 * (3.0 - 2.0 * s)
    return val, der


def _interp_matrix(n_waypoints: int, grid: int) -> np.ndarray:
    """Rows map waypoints to points at fractions s/grid along each segment, plus the last waypoint."""
    n_pts = (n_waypoints - 1) * grid + 1
    m = np.zeros((n_pts, n_waypoints))
    s = np.arange(n_pts)
    seg = np.minimum(s // grid, n_waypoints - 2) if n_waypoints > 1 else np.zeros_like(s)
    frac = (s - seg * grid) / grid
    m[s, seg] = 1.0 - frac
    if n_waypoints > 1:
        m[s, seg + 1] += frac
    return m


def _term_weights(n_waypoints: int, grid: int, subsamples: int | None) -> np.ndarray:
    """Per-sample weights realizing one term on the shared interpolation grid.

    ``subsamples=None`` is an IV term (waypoints only, weight 1).  An SV term
    with n subsamples takes the n points s/n, s = 0..n-1, of every segment plus
    the final waypoint, each scaled by 1/n.
    """
    n_pts = (n_waypoints - 1) * grid + 1
    w = np.zeros(n_pts)
    n = 1 if subsamples is None else subsamples
    w[:: grid // n] = 1.0 / n
    return w


class CostField:
    """Batched evaluator of the 12-term cost for trajectories of fixed length.

    ``evaluate`` takes configuration-space trajectories shaped ``(K, L, D)``.
    """

    def __init__(self, scene, robot: RobotModel, params: CostParams, n_waypoints: int,
                 terms: list[tuple[float, int | None]] | None = None, backend: str = "numba"):
        if n_waypoints < 2:
            raise GeometryError("trajectories need at least 2 waypoints")
        self.robot = robot
        self.params = params
        self.n_waypoints = n_waypoints
        if terms is None:
            terms = [(m, None) for m in params.iv_margins]
            terms += list(zip(params.sv_margins, params.sv_subsamples))
        self.terms = terms
        subs = [n for _, n in terms if n is not None]
        self.grid = reduce(math.lcm, subs, 1)
        self.interp = _interp_matrix(n_waypoints, self.grid)
        self.term_w = np.stack([_term_weights(n_waypoints, self.grid, n) for _, n in terms])
        self.margins = sorted({m for m, _ in terms})
        self.margin_of_term = np.array([self.margins.index(m) for m, _ in terms])
        # per-margin sample weights summed over the terms sharing that margin
        self.margin_w = np.stack([self.term_w[self.margin_of_term == i].sum(0) for i in range(len(self.margins))])
        self.obs_lo, self.obs_hi = boxes_to_arrays(list(scene.obstacles))
        self.delta = params.blend
        if backend not in ("numba", "numpy"):
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend

    # -- robot boxes -------------------------------------------------------
    def _boxes(self, s: np.ndarray):
        """Smooth body boxes for sample configs ``(K, P, D)`` -> lo, hi ``(K, P, B, 2)`` and pullback data."""
        h = self.robot.link_half_width
        if self.robot.kind == POINT:
            c = s[:, :, None, :]
            return c - h, c + h, None
        from .geometry import forward_kinematics

        pts = forward_kinematics(self.robot, s)  # (K, P, B+1, 2)
        a, b = pts[..., :-1, :], pts[..., 1:, :]
        r, dr = ramp(a - b, self.delta)
        lo = a - r - h  # smooth min(a, b)
        hi = b + r + h  # smooth max(a, b)
        return lo, hi, (pts, dr)

    def _pull_boxes(self, s, dlo, dhi, aux) -> np.ndarray:
        if self.robot.kind == POINT:
            return (dlo + dhi)[:, :, 0, :]
        pts, dr = aux
        # lo = a - r(a-b), hi = b + r(a-b)
        da = dlo * (1.0 - dr) + dhi * dr
        db = dlo * dr + dhi * (1.0 - dr)
        dpts = np.zeros_like(pts)
        dpts[..., :-1, :] += da
        dpts[..., 1:, :] += db
        n_links = self.robot.n_bodies
        ds = np.zeros(s.shape)
        for i in range(n_links):
            # joint i rotates every point beyond it about pts[i]
            rel = pts[..., i + 1:, :] - pts[..., i:i + 1, :]
            g = dpts[..., i + 1:, :]
            ds[..., i] = np.sum(g[..., 1] * rel[..., 0] - g[..., 0] * rel[..., 1], axis=-1)
        return ds

    # -- evaluation ----------------------------------------------------------
    def evaluate(self, traj: np.ndarray, grad: bool = False):
        """Return ``(terms (K, n_terms), total (K,), gradient (K, L, D) or None)``."""
        q = np.asarray(traj, dtype=float)
        squeeze = q.ndim == 2
        if squeeze:
            q = q[None]
        if q.ndim != 3 or q.shape[1] != self.n_waypoints or q.shape[2] != self.robot.config_dim:
            raise GeometryError(
                f"trajectory shape {q.shape[-2:]} does not match ({self.n_waypoints}, {self.robot.config_dim})")
        n_chain = q.shape[0]
        n_terms = len(self.terms)
        terms = np.zeros((n_chain, n_terms))
        dq = np.zeros_like(q) if grad else None
        if len(self.obs_lo) == 0:
            return self._out(terms, dq, squeeze)

        s = self.interp @ q
        lo, hi, aux = self._boxes(s)
        if self.backend == "numba":
            per_sample, dlo, dhi = self._accumulate_numba(lo, hi, grad)
        else:
            per_sample, dlo, dhi = self._accumulate_numpy(lo, hi, grad)
        terms[:] = np.einsum("jkp,jp->kj", per_sample[self.margin_of_term], self.term_w)
        if grad:
            ds = self._pull_boxes(s, dlo, dhi, aux)
            dq = self.interp.T @ ds
        return self._out(terms, dq, squeeze)

    def _accumulate_numba(self, lo, hi, grad):
        from ._kernels import accumulate

        n_chain, n_pts = lo.shape[:2]
        per_sample = np.zeros((len(self.margins), n_chain, n_pts))
        dlo = np.zeros(lo.shape) if grad else np.zeros((0, 0, 0, 2))
        dhi = np.zeros(hi.shape) if grad else np.zeros((0, 0, 0, 2))
        accumulate(np.ascontiguousarray(lo), np.ascontiguousarray(hi), self.obs_lo, self.obs_hi,
                   np.asarray(self.margins), self.margin_w, self.delta, grad, per_sample, dlo, dhi)
        return per_sample, dlo, dhi

    def _accumulate_numpy(self, lo, hi, grad):
        n_chain, n_pts = lo.shape[:2]
        n_m = len(self.margins)
        per_sample = np.zeros((n_m, n_chain, n_pts))
        dlo = np.zeros(lo.shape) if grad else None
        dhi = np.zeros(hi.shape) if grad else None
        olo, ohi = self.obs_lo, self.obs_hi
        # broad phase: hard overlap at the largest margin, widened by the blend zone
        pad = self.margins[-1] + self.delta
        near = None
        for ax in range(2):
            lo_ax, hi_ax = lo[..., ax, None], hi[..., ax, None]
            hit = (hi_ax > olo[:, ax] - pad) & (lo_ax < ohi[:, ax] + pad)
            near = hit if near is None else near & hit
        k, p, b, o = np.nonzero(near)
        if k.size == 0:
            return per_sample, dlo, dhi
        clo, chi = lo[k, p, b], hi[k, p, b]  # (C, 2)
        cl, ch = olo[o], ohi[o]
        # all margins at once: arrays are (M, C, 2)
        m = np.asarray(self.margins)[:, None, None]
        ru, dru = ramp(chi - (ch + m), self.delta)
        rv, drv = ramp(clo - (cl - m), self.delta)
        depth = (chi - ru) - (cl - m + rv)
        a, da = ramp(depth, self.delta)
        area = a[..., 0] * a[..., 1]
        bins = (np.arange(n_m)[:, None] * (n_chain * n_pts) + k * n_pts + p).ravel()
        per_sample[:] = np.bincount(bins, weights=area.ravel(),
                                    minlength=n_m * n_chain * n_pts).reshape(per_sample.shape)
        if grad:
            # d area / d depth_x = a_y * da_x and vice versa
            g_depth = self.margin_w[:, p][..., None] * da * a[..., ::-1]
            g_hi = np.sum(g_depth * (1.0 - dru), axis=0)
            g_lo = -np.sum(g_depth * drv, axis=0)
            flat = np.ravel_multi_index((k, p, b), lo.shape[:3])
            size = int(np.prod(lo.shape[:3]))
            for ax in range(2):
                dlo[..., ax] = np.bincount(flat, weights=g_lo[:, ax], minlength=size).reshape(lo.shape[:3])
                dhi[..., ax] = np.bincount(flat, weights=g_hi[:, ax], minlength=size).reshape(hi.shape[:3])
        return per_sample, dlo, dhi

    def _out(self, terms, dq, squeeze):
        total = terms.sum(axis=1)
        if squeeze:
            return terms[0], total[0], (None if dq is None else dq[0])
        return terms, total, dq

    def totals(self, traj: np.ndarray) -> np.ndarray:
        return self.evaluate(traj)[1]


def _single_term(traj, scene, robot, margin, subsamples, smoothing_eps):
    traj = np.asarray(traj, dtype=float)
    params = CostParams(smoothing_eps=smoothing_eps)
    field_ = CostField(scene, robot, params, traj.shape[0], terms=[(margin, subsamples)])
    return float(field_.evaluate(traj)[1])


def iv_cost(traj, scene, robot: RobotModel, margin: float, smoothing_eps: float = 1e-4) -> float:
    """Summed overlap of body boxes with ``margin``-inflated obstacles over all waypoints."""
    return _single_term(traj, scene, robot, margin, None, smoothing_eps)


def sv_cost(traj, scene, robot: RobotModel, margin: float, subsamples: int, smoothing_eps: float = 1e-4) -> float:
    """Overlap accumulated along the interpolated motion between waypoints.

    Each segment contributes the ``subsamples`` points at fractions s/subsamples,
    s = 0..subsamples-1, plus the final waypoint once, all weighted by
    1/subsamples, so ``subsamples=1`` reduces to :func:`iv_cost`.
    """
    if subsamples < 1:
        raise ValueError("subsamples must be >= 1")
    return _single_term(traj, scene, robot, margin, int(subsamples), smoothing_eps)


def sum_of_costs(traj, scene, robot: RobotModel, params: CostParams = CostParams(), grad: bool = True) -> CostReport:
    traj = np.asarray(traj, dtype=float)
    field_ = CostField(scene, robot, params, traj.shape[0])
    terms, total, g = field_.evaluate(traj, grad=grad)
    return CostReport(terms[:N_IV].copy(), terms[N_IV:].copy(), float(total), g)


def cost_gradient(traj, scene, robot: RobotModel, params: CostParams = CostParams()) -> np.ndarray:
    """dJ/dq for every waypoint, shape ``(L, D)``."""
    return sum_of_costs(traj, scene, robot, params, grad=True).gradient


def hard_overlap(scene, robot: RobotModel, configs: np.ndarray, margin: float = 0.0) -> np.ndarray:
    """Exact (unsmoothed) total overlap area per configuration, shape ``configs.shape[:-1]``."""
    from .geometry import forward_kinematics

    configs = np.asarray(configs, dtype=float)
    olo, ohi = boxes_to_arrays([inflate(o, margin) for o in scene.obstacles])
    if len(olo) == 0:
        return np.zeros(configs.shape[:-1])
    pts = forward_kinematics(robot, configs)
    h = robot.link_half_width
    if robot.kind == POINT:
        lo, hi = pts - h, pts + h
    else:
        lo = np.minimum(pts[..., :-1, :], pts[..., 1:, :]) - h
        hi = np.maximum(pts[..., :-1, :], pts[..., 1:, :]) + h
    d = np.minimum(hi[..., None, :], ohi) - np.maximum(lo[..., None, :], olo)
    area = np.prod(np.maximum(d, 0.0), axis=-1)
    return area.sum(axis=(-1, -2))
