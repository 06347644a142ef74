"""Guided parallel denoising: K chains, dynamic guidance start, cost-ranked selection."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from .costs import CostField, CostParams, hard_overlap
from .diffusion import fix_boundaries, predict_tau0, reverse_step
from .geometry import POINT, RobotModel, boxes_to_arrays, inflate, self_collides
from .guidance import GuidanceConfig, GuidanceState, detect_trigger, guided_update

PREDICTED = "PredictedTau0"
NOISY = "NoisyTauT"

TRACE_FIELDS = ("t", "cost_min", "cost_mean", "cost_max", "U", "U_smooth", "grad_U", "active")


class PlanningError(ValueError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    K: int = 64
    T: int | None = None
    guidance: GuidanceConfig = GuidanceConfig()
    costs: CostParams = CostParams()
    guidance_target: str = PREDICTED
    fixed_start_step: int | None = None
    seed: int = 0
    recompute_eps: bool = False
    validity_samples: int = 16

    def __post_init__(self):
        if self.K < 1:
            raise PlanningError("K must be >= 1")
        if self.guidance_target not in (PREDICTED, NOISY):
            raise PlanningError(f"guidance_target must be {PREDICTED} or {NOISY}")
        if self.T is not None and self.T < 1:
            raise PlanningError("T must be >= 1")
        if self.fixed_start_step is not None:
            if self.fixed_start_step < 1 or (self.T is not None and self.fixed_start_step > self.T):
                raise PlanningError("fixed_start_step must lie in [1, T]")
        if self.validity_samples < 8:
            raise PlanningError("validity_samples must be >= 8")


@dataclass
class PlanResult:
    best: np.ndarray
    success: bool
    best_cost: float
    best_index: int
    trigger_step: int | None
    all_costs: np.ndarray
    trajectories: np.ndarray
    validity: np.ndarray
    smoothed_peak_step: int | None = None
    trace: list[dict] | None = None


def select_best(costs, validity) -> tuple[int, bool]:
    """First valid index in ascending-cost order (ties by index), else the cheapest with success False."""
    costs = np.asarray(costs, dtype=float)
    validity = np.asarray(validity, dtype=bool)
    if costs.size == 0 or costs.shape != validity.shape:
        raise PlanningError("costs and validity must be non-empty and equally long")
    order = np.argsort(costs, kind="stable")
    for i in order:
        if validity[i]:
            return int(i), True
    return int(order[0]), False


def _segment_hits_box(a, b, lo, hi) -> bool:
    """Does the segment a->b pass through the open box (lo, hi)?"""
    enter, leave = -np.inf, np.inf
    for ax in range(2):
        d = b[ax] - a[ax]
        if d == 0.0:
            if not lo[ax] < a[ax] < hi[ax]:
                return False
            continue
        s1, s2 = (lo[ax] - a[ax]) / d, (hi[ax] - a[ax]) / d
        enter, leave = max(enter, min(s1, s2)), min(leave, max(s1, s2))
    return enter < leave and enter < 1.0 and leave > 0.0


def is_valid(traj, problem, robot: RobotModel, samples: int = 16) -> bool:
    """Collision-free, within the configuration limits, with exact boundary waypoints.

    A point robot is checked exactly along every straight segment (its box
    sweeps a segment against obstacles grown by the half width).  Arms are
    checked at ``samples`` interpolated configurations per segment, including
    link-link crossings.
    """
    traj = np.asarray(traj, dtype=float)
    if not (np.array_equal(traj[0], problem.q_start) and np.array_equal(traj[-1], problem.q_goal)):
        return False
    lim = np.asarray(robot.limits)
    # segments are convex combinations, so checking the waypoints covers the whole path
    if np.any(traj < lim[:, 0]) or np.any(traj > lim[:, 1]):
        return False
    if robot.kind == POINT:
        h = robot.link_half_width
        grown = [inflate(o, h) for o in problem.scene.obstacles]
        lo, hi = boxes_to_arrays(grown)
        if len(lo) == 0:
            return True
        # prefilter segments by bounding boxes
        a, b = traj[:-1], traj[1:]
        seg_lo, seg_hi = np.minimum(a, b), np.maximum(a, b)
        cand = np.all((seg_hi[:, None, :] > lo) & (seg_lo[:, None, :] < hi), axis=-1)
        for i, j in zip(*np.nonzero(cand)):
            if _segment_hits_box(a[i], b[i], lo[j], hi[j]):
                return False
        return True
    s = np.linspace(0.0, 1.0, samples, endpoint=False)
    dense = (traj[:-1, None, :] * (1.0 - s)[:, None] + traj[1:, None, :] * s[:, None]).reshape(-1, traj.shape[1])
    dense = np.concatenate([dense, traj[-1:]], axis=0)
    if np.any(hard_overlap(problem.scene, robot, dense) > 0.0):
        return False
    return not any(self_collides(robot, q) for q in dense)


class _Chain:
    """Mutable state of K parallel chains between denoising steps."""

    def __init__(self, tau, rngs):
        self.tau = tau
        self.rngs = rngs
        self.state = GuidanceState()
        self.records: list[dict] = []
        self.u_hist: list[float] = []
        self.eps = self.q0 = self.J = self.grad = None

    def fork(self) -> "_Chain":
        other = copy.copy(self)
        other.rngs = copy.deepcopy(self.rngs)
        other.records = [dict(r) for r in self.records]
        other.u_hist = list(self.u_hist)
        return other


@dataclass
class _Context:
    problem: object
    robot: RobotModel
    model: object
    field: CostField
    T: int
    fallback: int

    def __post_init__(self):
        self.sched = self.model.schedule
        self.x_start = self.robot.normalize(self.problem.q_start)
        self.x_goal = self.robot.normalize(self.problem.q_goal)
        self.scale = self.robot.denormalize_scale


def _observe(ctx: _Context, ch: _Chain, t: int, gcfg: GuidanceConfig, grad: bool) -> None:
    """Denoiser call, tau0 prediction, chain costs and trigger bookkeeping for step t."""
    ch.eps = ctx.model.predict_eps(ch.tau, t)
    ch.q0 = ctx.robot.denormalize(predict_tau0(ch.tau, ch.eps, t, ctx.sched))
    _, ch.J, ch.grad = ctx.field.evaluate(ch.q0, grad=grad)
    # bookkeeping runs every step, also after activation, so the trace holds the whole U~ curve
    ch.state = detect_trigger(replace(ch.state, costs=ch.J), gcfg, ctx.T - t, t)
    ch.u_hist.append(ch.state.U_smooth)


def _advance(ctx: _Context, ch: _Chain, t: int, cfg: PlannerConfig | None, trace: bool) -> None:
    """Optional guided update (``cfg`` given), then one reverse step with boundary clamping."""
    eps = ch.eps
    if cfg is not None and cfg.guidance.w > 0:
        if cfg.guidance_target == PREDICTED:
            grad = ch.grad if ch.grad is not None else ctx.field.evaluate(ch.q0, grad=True)[2]
        else:
            grad = ctx.field.evaluate(ctx.robot.denormalize(ch.tau), grad=True)[2]
        ch.tau = guided_update(ch.tau, grad * ctx.scale, cfg.guidance.w)
        if cfg.recompute_eps:
            eps = ctx.model.predict_eps(ch.tau, t)
    if trace:
        st = ch.state
        ch.records.append({"t": t, "cost_min": float(ch.J.min()), "cost_mean": float(ch.J.mean()),
                           "cost_max": float(ch.J.max()), "U": st.U, "U_smooth": st.U_smooth,
                           "grad_U": st.grad_U, "active": False})
    n_wp, dim = ch.tau.shape[1:]
    noise = np.stack([r.standard_normal((n_wp, dim)) for r in ch.rngs]) if t > 1 else None
    ch.tau = fix_boundaries(reverse_step(ch.tau, eps, t, ctx.sched, noise=noise), ctx.x_start, ctx.x_goal)
    ch.eps = ch.q0 = ch.J = ch.grad = None


def _activates(cfg: PlannerConfig, state: GuidanceState, t: int, fallback: int) -> bool:
    if cfg.fixed_start_step is not None:
        return t <= cfg.fixed_start_step
    return state.active or t <= fallback


def _finish(ctx: _Context, ch: _Chain, cfg: PlannerConfig, trigger_step: int, trace: bool) -> PlanResult:
    problem, robot = ctx.problem, ctx.robot
    # samples are clipped to the data range [-1, 1], i.e. to the configuration limits
    final = fix_boundaries(robot.denormalize(np.clip(ch.tau, -1.0, 1.0)), problem.q_start, problem.q_goal)
    final_costs = ctx.field.totals(final)
    validity = np.array([is_valid(q, problem, robot, cfg.validity_samples) for q in final])
    idx, success = select_best(final_costs, validity)
    peak = ctx.T - int(np.argmax(ch.u_hist)) if ch.u_hist else None
    records = None
    if trace:
        records = [{**r, "active": r["t"] <= trigger_step} for r in ch.records]
    return PlanResult(final[idx], success, float(final_costs[idx]), idx, trigger_step, final_costs,
                      final, validity, peak, records)


def _prefix_key(cfg: PlannerConfig):
    # everything that shapes the chains before guidance is first applied
    return (cfg.K, cfg.seed, cfg.costs, replace(cfg.guidance, w=0.0))


def plan_many(problem, robot: RobotModel, model, cfgs, trace: bool = False) -> list[PlanResult]:
    """Plan one problem under several configurations.

    Configurations that agree on everything except the guidance scale,
    target and start step produce identical chains until guidance first
    acts, so that prefix is sampled once and forked at each activation
    step.  Each result equals what :func:`plan` returns for its config.
    """
    cfgs = list(cfgs)
    n_wp, dim = model.n_waypoints, model.dim
    if dim != robot.config_dim or len(problem.q_start) != dim:
        raise PlanningError(f"model dimension {dim}, robot {robot.config_dim}, problem {len(problem.q_start)} differ")
    T = model.schedule.T
    for cfg in cfgs:
        if cfg.T is not None and cfg.T != T:
            raise PlanningError(f"config T={cfg.T} but the denoiser was trained with T={T}")
        if cfg.fixed_start_step is not None and cfg.fixed_start_step > T:
            raise PlanningError("fixed_start_step exceeds T")
    fast = model.fast() if hasattr(model, "fast") else model
    results: list[PlanResult | None] = [None] * len(cfgs)
    groups: dict = {}
    for i, cfg in enumerate(cfgs):
        groups.setdefault(_prefix_key(cfg), []).append(i)

    for members in groups.values():
        head = cfgs[members[0]]
        gcfg = head.guidance
        fallback = gcfg.fallback_step if gcfg.fallback_step is not None else max(1, T // 8)
        ctx = _Context(problem, robot, fast, CostField(problem.scene, robot, head.costs, n_wp), T, fallback)
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(head.seed).spawn(head.K)]
        base = _Chain(np.stack([r.standard_normal((n_wp, dim)) for r in rngs]), rngs)
        pending = list(members)
        followers: dict[int, int] = {}
        for t in range(T, 0, -1):
            if not pending and not followers:
                break
            _observe(ctx, base, t, gcfg, grad=False)
            for i in [i for i in pending if _activates(cfgs[i], base.state, t, fallback)]:
                pending.remove(i)
                cfg = cfgs[i]
                if cfg.guidance.w == 0:
                    followers[i] = t
                    continue
                ch = base.fork()
                _advance(ctx, ch, t, cfg, trace)
                want_grad = cfg.guidance_target == PREDICTED
                for t2 in range(t - 1, 0, -1):
                    _observe(ctx, ch, t2, gcfg, grad=want_grad)
                    _advance(ctx, ch, t2, cfg, trace)
                results[i] = _finish(ctx, ch, cfg, t, trace)
            _advance(ctx, base, t, None, trace)
        for i, t_act in followers.items():
            results[i] = _finish(ctx, base, cfgs[i], t_act, trace)
    return results


def plan(problem, robot: RobotModel, model, cfg: PlannerConfig = PlannerConfig(), trace: bool = False) -> PlanResult:
    """Run guided sampling for one problem and return the selected trajectory."""
    return plan_many(problem, robot, model, [cfg], trace)[0]
