"""Two-objective minimum-norm weighting (MGDA).

The weight ``a`` minimizing ``||a g1 + (1 - a) g2||`` over ``[0, 1]`` has the
closed form ``clip((g2 - g1) . g2 / ||g2 - g1||^2, 0, 1)``; ``-(a g1 + (1-a) g2)``
is then a descent direction for both objectives unless it is zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEGENERATE_EPS = 1e-24


@dataclass(frozen=True)
class MgdaWeights:
    gamma1: float
    gamma2: float
    # both gradients vanish: nothing left to descend along
    pareto_stationary: bool = False


def min_norm_weights(g1, g2) -> MgdaWeights:
    g1 = np.asarray(g1, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    if g1.shape != g2.shape:
        raise ValueError(f"gradient shapes differ: {g1.shape} vs {g2.shape}")
    if not (np.all(np.isfinite(g1)) and np.all(np.isfinite(g2))):
        raise ValueError("gradients must be finite")
    if not g1.any() and not g2.any():
        return MgdaWeights(0.5, 0.5, pareto_stationary=True)
    diff = g2 - g1
    denom = float(diff @ diff)
    if denom < DEGENERATE_EPS:
        return MgdaWeights(0.5, 0.5)
    a = float(np.clip((diff @ g2) / denom, 0.0, 1.0))
    return MgdaWeights(a, 1.0 - a)


def combine(weights: MgdaWeights, g1, g2) -> np.ndarray:
    return weights.gamma1 * np.asarray(g1, dtype=np.float64) + weights.gamma2 * np.asarray(g2, dtype=np.float64)


def descent_tolerance(g1, g2, rel: float = 1e-8) -> float:
    return rel * max(float(np.dot(g1, g1)), float(np.dot(g2, g2)))


def assert_common_descent(g, g1, g2, tol: float | None = None) -> bool:
    """True when ``-g`` does not ascend either objective, up to ``tol``."""
    if tol is None:
        tol = descent_tolerance(g1, g2)
    return bool(np.dot(g1, g) >= -tol and np.dot(g2, g) >= -tol)


def case_of(g1, g2) -> int:
    """1: all weight on g2, 2: interior mix, 3: all weight on g1."""
    w = min_norm_weights(g1, g2)
    if w.gamma1 <= 0.0:
        return 1
    if w.gamma1 >= 1.0:
        return 3
    return 2
