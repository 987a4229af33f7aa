"""Combined goal functional with error-sign weights."""

from __future__ import annotations

import dataclasses
import logging
import warnings

import numpy as np

from .fespace import inject, patch_interpolation
from .goals import eval_goal, goal_derivative

log = logging.getLogger(__name__)


class DegenerateGoalWarning(UserWarning):
    """A goal has no detectable error contribution on the current mesh."""


@dataclasses.dataclass
class CombinedGoal:
    """``J_c = sum_i w_i J_i`` with ``w_i = omega_i sigma_i``.

    ``active`` switches off goals whose error estimate vanished exactly
    (see :func:`compute_signs`); their effective weight is zero.
    ``relative`` divides each weight by ``|J_i(U_h)|``.
    """

    goals: list
    omega: np.ndarray
    sigma: np.ndarray | None = None
    active: np.ndarray | None = None
    relative: bool = False
    scale: np.ndarray | None = None

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        if len(self.omega) != len(self.goals):
            raise ValueError("one weight per goal required")
        if np.any(self.omega < 0):
            raise ValueError("weights must be non-negative")
        n = len(self.goals)
        self.sigma = np.ones(n) if self.sigma is None else np.asarray(self.sigma, dtype=float)
        self.active = np.ones(n, dtype=bool) if self.active is None else np.asarray(self.active)
        if not np.all(np.abs(self.sigma) == 1):
            raise ValueError("signs must be +-1")

    @property
    def w(self):
        w = self.omega * self.sigma * self.active
        if self.relative and self.scale is not None:
            w = w / np.maximum(np.abs(self.scale), 1e-300)
        return w

    def with_weights(self, omega):
        return dataclasses.replace(self, omega=np.asarray(omega, dtype=float))


def sign(x):
    """Sign with ``sign(0) = +1``."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def goal_values(goals, problem, x_full):
    return np.array([eval_goal(g, problem, x_full) for g in goals])


def compute_signs(goals, values_low, values_high, rtol=1e-12):
    """Signs of ``J_i(high) - J_i(low)`` and a mask of non-degenerate goals.

    A difference below ``rtol * max(|J_i|, 1e-300)`` counts as exactly zero:
    the sign is ``+1`` and the goal is flagged degenerate.
    """
    diff = np.asarray(values_high) - np.asarray(values_low)
    scale = np.maximum(np.maximum(np.abs(values_low), np.abs(values_high)), 1e-300)
    degenerate = np.abs(diff) <= rtol * scale
    for g, d in zip(goals, degenerate):
        if d:
            warnings.warn(
                f"goal {g.name!r}: higher-order value equals the discrete value "
                "(evaluation at a grid point); its adjoint contribution vanishes",
                DegenerateGoalWarning, stacklevel=2)
    return sign(diff), ~degenerate


def eval_combined(cg: CombinedGoal, problem, x_full, signed=True):
    """``sum_i w_i J_i``; with ``signed=False`` the plain ``sum_i omega_i J_i``."""
    vals = goal_values(cg.goals, problem, x_full)
    return float((cg.w if signed else cg.omega) @ vals)


def combined_derivative(cg: CombinedGoal, problem, x_full):
    out = np.zeros(problem.space.n_dofs)
    for g, w in zip(cg.goals, cg.w):
        if w != 0.0:
            out += w * goal_derivative(g, problem, x_full)
    return out


def enriched_primal_solve(prob_low, x_low, prob_high, steps=2, settings=None):
    """Budgeted Newton iteration on the enriched space from the injected state."""
    x0 = inject(prob_low.space, prob_high.space, x_low)
    # Dirichlet data of the enriched space are interpolated exactly
    x0 = prob_high.amap.expand(prob_high.amap.restrict(x0))
    x, hist = prob_high.solve(x0, settings=settings, fixed_steps=steps)
    log.info("enriched primal: |r| %.3e -> %.3e in %d steps",
             hist[0]["res"], hist[-1]["res"], len(hist) - 1)
    return x, hist


def higher_order_values(goals, prob_low, x_low, prob_high, method="patch_interpolation",
                        steps=2):
    """Goal values of a higher-order approximation used for the sign test.

    Returns ``(values, x_high)`` where ``x_high`` lives on ``prob_high.space``.
    """
    if method == "patch_interpolation":
        x_high = patch_interpolation(prob_low.space, x_low, prob_high.space)
    elif method == "enriched_solve":
        x_high, _ = enriched_primal_solve(prob_low, x_low, prob_high, steps)
    else:
        raise ValueError(f"unknown sign method {method!r}")
    return goal_values(goals, prob_high, x_high), x_high
