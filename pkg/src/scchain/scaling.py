"""Finite-length scaling laws for short (single critical point) and long (steady-state) chains."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import erfc, ndtr

from .evolution import Trajectory, critical_report

ALPHA_SHORT = 0.22  # chains of length ~25
ALPHA_LONG = 0.17  # chains of length ~50
THETA = 0.59
UPPER_LIMIT_WARN = 8.0
OVERFLOW_LIMIT = 37.0  # exp(z^2 / 2) leaves double range beyond ~37.6


class NotApplicable(ValueError):
    """The trajectory has no steady-state phase."""


@dataclass(frozen=True)
class ScalingParams:
    alpha: float
    theta: float
    ybar: float
    epsilon_star: float
    M: int
    L: int

    def __post_init__(self):
        if not (self.alpha > 0 and self.theta > 0 and self.ybar >= 0 and 0 < self.epsilon_star < 1):
            raise ValueError(f"invalid scaling parameters {self}")


def q_function(x):
    """Standard normal tail probability."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def p_block_short(delta_eps: float, M: float, alpha: float) -> float:
    """Block error probability when decoding passes a single critical point."""
    if M <= 0 or alpha <= 0:
        raise ValueError("M and alpha must be positive")
    return float(q_function(math.sqrt(M) * delta_eps / alpha))


def mu0(M: float, delta_eps: float, alpha: float, theta: float) -> float:
    """Mean survival time of the degree-one process in the steady-state phase."""
    if theta <= 0 or alpha <= 0:
        raise ValueError("alpha and theta must be positive")
    if delta_eps <= 0:
        warnings.warn("delta_eps <= 0 is outside the scaling-law regime; returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    upper = math.sqrt(M) * delta_eps / alpha
    if upper > UPPER_LIMIT_WARN:
        warnings.warn(f"upper limit {upper:.3g} > {UPPER_LIMIT_WARN}: survival time beyond practical scales",
                      RuntimeWarning, stacklevel=2)
    if upper > OVERFLOW_LIMIT:
        return math.inf
    val, _ = quad(lambda z: ndtr(z) * math.exp(0.5 * z * z), 0.0, upper, epsabs=0.0, epsrel=1e-12, limit=200)
    return math.sqrt(2.0 * math.pi) / theta * val


def p_block_long(L: float, epsilon: float, ybar: float, mu0_value: float, n_chains: int = 1) -> float:
    """Block error probability of ``n_chains`` chains that each cross a steady-state phase.

    A zero survival time is the degenerate regime where failure is certain.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    if mu0_value < 0:
        raise ValueError("mu0 must be non-negative")
    if mu0_value == 0:
        return 1.0
    return float(-math.expm1(-n_chains * epsilon * L * ybar / mu0_value))


def p_block_two_chains(L: float, epsilon: float, ybar: float, mu0_value: float) -> float:
    """Two independent chains of the same length (the loop ensemble's long-L behaviour)."""
    if mu0_value == 0:
        return 1.0
    return float(-math.expm1(-2 * epsilon * L * ybar / mu0_value))


@dataclass(frozen=True)
class YbarEstimate:
    ybar: float
    plateau_span: tuple[float, float]
    label: str = "heuristic estimate: plateau length / (epsilon * L)"


def estimate_ybar(traj: Trajectory, L: int) -> YbarEstimate:
    rep = critical_report(traj)
    if rep.regime != "steady-state-phase" or rep.plateau_span is None:
        raise NotApplicable("trajectory has no steady-state phase")
    start, end = rep.plateau_span
    return YbarEstimate(max(end - start, 0.0) / (traj.epsilon * L), rep.plateau_span)


def prediction_rows(params: ScalingParams, delta_grid, n_chains: int = 1):
    """Rows (eps, delta_eps, p_short, mu0, p_long) for a grid of gaps below threshold."""
    rows = []
    for d in delta_grid:
        eps = params.epsilon_star - d
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            m = mu0(params.M, d, params.alpha, params.theta)
        rows.append((eps, d, p_block_short(d, params.M, params.alpha), m,
                     p_block_long(params.L, eps, params.ybar, m, n_chains)))
    return rows
