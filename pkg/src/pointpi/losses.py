"""Point, interval and quantile losses as differentiable tape expressions.

Every function accepts :class:`~pointpi.diffcore.Tensor` or plain arrays and
returns a Tensor, so the same code serves training (on a tape) and evaluation.
Targets and bounds are expected in normalized units unless ``r_q`` says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .diffcore import Tensor, as_tensor, clamp, log, maximum, sort, tanh

# regime mask sums below this leave that regime's coverage undefined
MIN_MASK_SUM = 1e-9


@dataclass
class LossConfig:
    p_day: float = 0.90
    p_night: float = 0.15
    rho: float = 10.0
    r_cap: float = 100.0
    lam: float = 0.8
    k_frac: float = 0.3
    s: float = 50.0
    night_threshold: float = 0.001
    r_q: float = 1.0

    def __post_init__(self):
        if not 0 < self.p_night < self.p_day < 1:
            raise ValueError(f"need 0 < p_night < p_day < 1, got {self.p_night}, {self.p_day}")
        for name in ("rho", "r_cap", "s", "r_q"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.lam < 1:
            raise ValueError(f"lam must lie in [0, 1), got {self.lam}")
        if not 0 < self.k_frac < 1:
            raise ValueError(f"k_frac must lie in (0, 1), got {self.k_frac}")

    def top_k(self, n: int) -> int:
        return max(1, int(math.floor(self.k_frac * n)))


@dataclass
class BarrierState:
    """Barrier sharpness per forecast step, separately for day and night samples."""

    r_day: np.ndarray
    r_night: np.ndarray

    @classmethod
    def initial(cls, horizon: int, r_cap: float) -> "BarrierState":
        return cls(np.full(horizon, float(r_cap)), np.full(horizon, float(r_cap)))

    def copy(self) -> "BarrierState":
        return BarrierState(self.r_day.copy(), self.r_night.copy())


def point_loss(forecast, targets, r_q: float = 1.0) -> Tensor:
    """Mean absolute error over all samples and steps, divided by ``r_q``."""
    if r_q <= 0:
        raise ValueError("r_q must be positive")
    point = forecast.point if hasattr(forecast, "point") else forecast
    return abs(as_tensor(point) - np.asarray(targets, dtype=np.float64)).mean() * (1.0 / r_q)


def extended_log_barrier(z, r):
    """Log-barrier ``-log(-z)/r`` continued linearly past ``z = -1/r**2``.

    Written as the maximum of the clamped log branch and its tangent line at the
    knot, which equals the piecewise definition because the barrier is convex.
    """
    r = np.asarray(r, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("r must be positive")
    knot = 1.0 / r**2
    log_branch = log(clamp(-as_tensor(z), lo=knot)) * (-1.0 / r)
    tangent = as_tensor(z) * r + (-np.log(knot) / r + 1.0 / r)
    return maximum(log_branch, tangent)


def adaptive_r(p: float, picp: float, rho: float, r_cap: float) -> float:
    """``min(r_cap, rho / |p - picp|)``; exact attainment returns ``r_cap``."""
    gap = abs(p - picp)
    if gap == 0:
        return float(r_cap)
    return float(min(r_cap, rho / gap))


def sumk_width(widths, k: int, lam: float, r_q: float = 1.0) -> Tensor:
    """Mean of the ``k`` largest widths plus ``lam`` times the mean of the rest, over ``r_q``.

    ``widths`` may be N or N x H; in the latter case each column is ranked on its
    own and a length-H vector is returned.
    """
    w = as_tensor(widths)
    n = w.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < N, got k={k}, N={n}")
    ranked = sort(w, axis=0, descending=True)
    top = ranked[:k].sum(axis=0) * (1.0 / k)
    rest = ranked[k:].sum(axis=0) * (lam / (n - k))
    return (top + rest) * (1.0 / r_q)


def smooth_indicator(y, lower, upper, s: float) -> Tensor:
    """``0.5 * max(0, tanh(s(y - l)) + tanh(s(u - y)))``, a soft version of ``l <= y <= u``."""
    y = np.asarray(y, dtype=np.float64)
    inside = tanh((y - as_tensor(lower)) * s) + tanh((as_tensor(upper) - y) * s)
    return maximum(inside, 0.0) * 0.5


def smooth_picp(y, lower, upper, s: float) -> Tensor:
    return smooth_indicator(y, lower, upper, s).mean(axis=0)


class RegimeCoverage(NamedTuple):
    """Soft coverage for day and night samples.

    Where ``n_day`` (``n_night``) is below ``MIN_MASK_SUM`` that regime has no
    samples and ``picp_day`` (``picp_night``) is undefined; its value there is
    a placeholder that callers must ignore.
    """

    picp_day: Tensor
    picp_night: Tensor
    n_day: np.ndarray
    n_night: np.ndarray

    @property
    def day_defined(self):
        return np.asarray(self.n_day) >= MIN_MASK_SUM

    @property
    def night_defined(self):
        return np.asarray(self.n_night) >= MIN_MASK_SUM

    def as_floats(self):
        """Plain floats (1-D input) with ``None`` for an undefined regime."""
        day = float(self.picp_day) if self.day_defined else None
        night = float(self.picp_night) if self.night_defined else None
        return day, night, float(self.n_day), float(self.n_night)


def regime_masks(y, s: float, threshold: float):
    y = np.asarray(y, dtype=np.float64)
    day = np.maximum(np.tanh(s * (y - threshold)), 0.0)
    night = np.maximum(np.tanh(s * (threshold - y)), 0.0)
    return day, night


def day_night_picp(y, lower, upper, s: float, threshold: float) -> RegimeCoverage:
    """Soft coverage weighted by soft day and night masks derived from the targets."""
    day_mask, night_mask = regime_masks(y, s, threshold)
    ind = smooth_indicator(y, lower, upper, s)
    n_day = day_mask.sum(axis=0)
    n_night = night_mask.sum(axis=0)
    safe_day = np.where(n_day >= MIN_MASK_SUM, n_day, 1.0)
    safe_night = np.where(n_night >= MIN_MASK_SUM, n_night, 1.0)
    picp_day = (ind * day_mask).sum(axis=0) * (1.0 / safe_day)
    picp_night = (ind * night_mask).sum(axis=0) * (1.0 / safe_night)
    return RegimeCoverage(picp_day, picp_night, n_day, n_night)


class PiLossTerms(NamedTuple):
    barrier_day: Tensor
    barrier_night: Tensor
    width: Tensor
    coverage: RegimeCoverage

    @property
    def per_step(self) -> Tensor:
        return self.barrier_day + self.barrier_night + self.width


def pi_loss_terms(forecast, targets, barrier: BarrierState, cfg: LossConfig, k: int | None = None) -> PiLossTerms:
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    lower, upper = forecast.lower, forecast.upper
    if lower.ndim == 1:
        lower, upper = lower.reshape(-1, 1), upper.reshape(-1, 1)
    cov = day_night_picp(y, lower, upper, cfg.s, cfg.night_threshold)
    r_day = np.broadcast_to(barrier.r_day, y.shape[1:])
    r_night = np.broadcast_to(barrier.r_night, y.shape[1:])
    # an empty regime contributes nothing for that step
    barrier_day = extended_log_barrier(cfg.p_day - cov.picp_day, r_day) * cov.day_defined.astype(float)
    barrier_night = extended_log_barrier(cfg.p_night - cov.picp_night, r_night) * cov.night_defined.astype(float)
    if k is None:
        k = cfg.top_k(y.shape[0])
    width = sumk_width(upper - lower, k, cfg.lam, cfg.r_q)
    return PiLossTerms(barrier_day, barrier_night, width, cov)


def pi_loss(forecast, targets, barrier: BarrierState, cfg: LossConfig, k: int | None = None) -> Tensor:
    """Average over steps of day barrier + night barrier + Sum-k width penalty."""
    return pi_loss_terms(forecast, targets, barrier, cfg, k).per_step.mean()


def pinball(residual, tau: float) -> Tensor:
    r = as_tensor(residual)
    return maximum(r * tau, r * (tau - 1.0))


def pinball_loss(forecast, targets, alpha: float) -> Tensor:
    """Two-quantile pinball loss for a central ``1 - alpha`` interval, averaged over all entries."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    y = np.asarray(targets, dtype=np.float64)
    lower = as_tensor(forecast.lower if hasattr(forecast, "lower") else forecast[0])
    upper = as_tensor(forecast.upper if hasattr(forecast, "upper") else forecast[1])
    return (pinball(y - lower, alpha / 2) + pinball(y - upper, 1 - alpha / 2)).mean()
