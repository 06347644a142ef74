"""Dynamic guidance start detection and the gradient guidance update."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class GuidanceError(ValueError):
    pass


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance knobs.

    ``epsilon`` is the absolute trigger threshold on |U~_t - U~_{t+1}|; when
    left as None it defaults to ``epsilon_per_chain * K``.
    ``fallback_step`` activates guidance if the detector never fires; None
    means T // 8.
    """

    w: float = 0.1
    lam: float = 0.1
    gamma: float = 0.9
    epsilon: float | None = None
    epsilon_per_chain: float = 0.002
    warmup_steps: int = 5
    fallback_step: int | None = None

    def __post_init__(self):
        if self.w < 0:
            raise GuidanceError("guidance scale w must be >= 0")
        if not self.lam > 0:
            raise GuidanceError("softmax temperature lambda must be > 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise GuidanceError("gamma must lie in [0, 1]")
        if self.epsilon is not None and not self.epsilon > 0:
            raise GuidanceError("epsilon must be > 0")
        if not self.epsilon_per_chain > 0:
            raise GuidanceError("epsilon_per_chain must be > 0")
        if self.warmup_steps < 0:
            raise GuidanceError("warmup_steps must be >= 0")

    def threshold(self, n_chains: int) -> float:
        return self.epsilon if self.epsilon is not None else self.epsilon_per_chain * n_chains


@dataclass
class GuidanceState:
    costs: np.ndarray | None = None
    weights: np.ndarray | None = None
    U: float = float("nan")
    U_smooth: float = float("nan")
    U_smooth_prev: float = 0.0
    grad_U: float = float("nan")
    active: bool = False
    trigger_step: int | None = None


def softmax_weights(costs, lam: float) -> np.ndarray:
    """exp(-J/lam) normalized over chains, computed with max-subtraction."""
    if not lam > 0:
        raise GuidanceError("lambda must be > 0")
    costs = np.asarray(costs, dtype=float)
    if costs.ndim != 1 or costs.size < 1:
        raise GuidanceError("costs must be a non-empty 1-D array")
    if not np.all(np.isfinite(costs)):
        raise GuidanceError("costs must be finite")
    z = -costs / lam
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def uniformity(weights) -> float:
    """Inverse participation ratio 1 / sum(w^2): K for uniform weights, 1 for a point mass."""
    w = np.asarray(weights, dtype=float)
    s = float(np.sum(w * w))
    if s <= 0.0:
        raise GuidanceError("weights are all zero")
    return 1.0 / s


def ema_update(U_t: float, U_smooth_prev: float, gamma: float) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise GuidanceError("gamma must lie in [0, 1]")
    return gamma * U_smooth_prev + (1.0 - gamma) * U_t


def detect_trigger(state: GuidanceState, cfg: GuidanceConfig, steps_elapsed: int, t: int | None = None,
                   U_t: float | None = None, n_chains: int | None = None) -> GuidanceState:
    """Advance the trigger by one denoising step.

    Uses ``U_t`` if given, else the uniformity of ``state.costs``.  Returns a
    new state; once active it stays active.
    """
    if U_t is None:
        weights = softmax_weights(state.costs, cfg.lam)
        U_t = uniformity(weights)
        n_chains = len(state.costs)
    else:
        weights = state.weights
    if n_chains is None:
        raise GuidanceError("n_chains is needed when U_t is supplied directly")
    U_smooth = ema_update(U_t, state.U_smooth_prev, cfg.gamma)
    grad = abs(U_smooth - state.U_smooth_prev)
    new = replace(state, weights=weights, U=float(U_t), U_smooth=U_smooth, grad_U=grad, U_smooth_prev=U_smooth)
    if not state.active and steps_elapsed >= cfg.warmup_steps and grad < cfg.threshold(n_chains):
        new.active = True
        new.trigger_step = t
    return new


def guided_update(tau_t, grad, w: float) -> np.ndarray:
    """tau_t - w * grad."""
    tau_t = np.asarray(tau_t)
    grad = np.asarray(grad)
    if tau_t.shape != grad.shape:
        raise GuidanceError(f"shape mismatch {tau_t.shape} vs {grad.shape}")
    if w < 0:
        raise GuidanceError("w must be >= 0")
    return tau_t - w * grad
