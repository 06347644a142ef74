"""DDPM machinery over trajectories: schedules, forward noising, reverse steps.

Steps are 1-indexed (t = 1..T) everywhere in the public API; arrays are
stored 0-indexed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DiffusionError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim != 1 or beta.size < 1:
            raise DiffusionError("beta must be a non-empty 1-D array")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise DiffusionError("beta must lie in (0, 1)")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        for name, arr in (("alpha", alpha), ("alpha_bar", alpha_bar)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    def check_step(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise DiffusionError(f"step {t} outside [1, {self.T}]")
        return t

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative alpha at step t, with alpha_bar_0 = 1."""
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def posterior_variance(self, t: int) -> float:
        t = self.check_step(t)
        ab, ab_prev = self.alpha_bar_at(t), self.alpha_bar_at(t - 1)
        return float(self.beta[t - 1] * (1.0 - ab_prev) / (1.0 - ab))


def make_schedule(T: int, kind: str = "linear", beta_start: float = 1e-4, beta_end: float = 2e-2,
                  cosine_s: float = 8e-3) -> NoiseSchedule:
    """Linear betas in [beta_start, beta_end], or the cosine alpha-bar schedule (betas clipped at 0.999)."""
    if int(T) < 1:
        raise DiffusionError("T must be >= 1")
    T = int(T)
    if kind == "linear":
        beta = np.linspace(beta_start, beta_end, T)
    elif kind == "cosine":
        s = np.arange(T + 1) / T
        f = np.cos((s + cosine_s) / (1 + cosine_s) * np.pi / 2) ** 2
        ab = f / f[0]
        beta = np.clip(1.0 - ab[1:] / ab[:-1], 1e-8, 0.999)
    else:
        raise DiffusionError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(beta, kind)


def forward_sample(tau0: np.ndarray, t: int, schedule: NoiseSchedule, rng: np.random.Generator,
                   noise: np.ndarray | None = None) -> np.ndarray:
    """Draw tau_t ~ q(tau_t | tau_0) in closed form."""
    t = schedule.check_step(t)
    tau0 = np.asarray(tau0, dtype=float)
    if noise is None:
        noise = rng.standard_normal(tau0.shape)
    ab = schedule.alpha_bar_at(t)
    return np.sqrt(ab) * tau0 + np.sqrt(1.0 - ab) * noise


def predict_tau0(tau_t: np.ndarray, eps_hat: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """One-shot clean-trajectory estimate from the predicted noise."""
    t = schedule.check_step(t)
    tau_t = np.asarray(tau_t)
    eps_hat = np.asarray(eps_hat)
    if tau_t.shape != eps_hat.shape:
        raise DiffusionError(f"shape mismatch {tau_t.shape} vs {eps_hat.shape}")
    ab = schedule.alpha_bar_at(t)
    if ab <= 0.0:
        raise DiffusionError(f"alpha_bar is zero at step {t}")
    return (tau_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def posterior_mean(tau_t: np.ndarray, eps_hat: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    t = schedule.check_step(t)
    beta = schedule.beta[t - 1]
    ab = schedule.alpha_bar_at(t)
    return (tau_t - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(schedule.alpha[t - 1])


def reverse_step(tau_t: np.ndarray, eps_hat: np.ndarray, t: int, schedule: NoiseSchedule,
                 rng: np.random.Generator | None = None, noise: np.ndarray | None = None) -> np.ndarray:
    """Sample tau_{t-1} from the Gaussian reverse transition.

    The variance is the fixed DDPM posterior variance; at t = 1 the mean is
    returned without noise.  ``noise`` overrides drawing from ``rng``.
    """
    tau_t = np.asarray(tau_t)
    if tau_t.shape != np.shape(eps_hat):
        raise DiffusionError(f"shape mismatch {tau_t.shape} vs {np.shape(eps_hat)}")
    mu = posterior_mean(tau_t, eps_hat, t, schedule)
    if t == 1:
        return mu
    if noise is None:
        noise = rng.standard_normal(tau_t.shape)
    return mu + np.sqrt(schedule.posterior_variance(t)) * noise


def fix_boundaries(tau: np.ndarray, q_start, q_goal) -> np.ndarray:
    """Copy of ``tau`` (``(..., L, D)``) with the first/last waypoints reset."""
    tau = np.array(tau, copy=True)
    q_start = np.asarray(q_start, dtype=tau.dtype)
    q_goal = np.asarray(q_goal, dtype=tau.dtype)
    if q_start.shape != tau.shape[-1:] or q_goal.shape != tau.shape[-1:]:
        raise DiffusionError(f"boundary dimension mismatch: {q_start.shape}, {q_goal.shape} vs {tau.shape}")
    tau[..., 0, :] = q_start
    tau[..., -1, :] = q_goal
    return tau


def as_trajectory(tau, dim: int | None = None) -> np.ndarray:
    """Validate an ``(L, D)`` trajectory array."""
    tau = np.asarray(tau, dtype=float)
    if tau.ndim != 2 or tau.shape[0] < 2:
        raise DiffusionError(f"trajectory must be (L >= 2, D), got shape {tau.shape}")
    if dim is not None and tau.shape[1] != dim:
        raise DiffusionError(f"trajectory dimension {tau.shape[1]} != {dim}")
    if not np.all(np.isfinite(tau)):
        raise DiffusionError("trajectory has non-finite entries")
    return tau
