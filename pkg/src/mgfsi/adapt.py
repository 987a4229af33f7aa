"""Adaptive solve-estimate-mark-refine loop."""

from __future__ import annotations

import dataclasses
import logging
import time
import warnings

import numpy as np

from .dwr import (ErrorEstimate, cell_indicators, estimate_full, estimate_primal, indices,
                  solve_enriched_adjoint, touching_cells)
from .fespace import ENRICHED_FIELDS, prolongate
from .fsi_model import FsiProblem, TanglingError
from .multigoal import (CombinedGoal, DegenerateGoalWarning, compute_signs, enriched_primal_solve,
                        goal_values, higher_order_values)

log = logging.getLogger(__name__)

MODES = ("adaptive", "uniform")
ESTIMATORS = ("primal", "full")


class AdaptError(RuntimeError):
    """A failure inside the loop, tagged with the level at which it occurred."""

    def __init__(self, msg, level):
        super().__init__(f"level {level}: {msg}")
        self.level = level


@dataclasses.dataclass
class AdaptParams:
    alpha: float = 1.0
    tol: float = 1e-12
    max_levels: int = 6
    mode: str = "adaptive"
    estimator: str = "primal"
    sign_method: str = "patch_interpolation"
    half_factor: bool = False
    enriched_steps: int = 2
    estimate: bool = True      # uniform runs may skip the estimator entirely

    def __post_init__(self):
        self.mode = self.mode.lower()
        self.estimator = self.estimator.lower()
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.tol <= 0:
            raise ValueError("TOL must be positive")
        if self.max_levels < 1:
            raise ValueError("max_levels must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.mode == "adaptive" and not self.estimate:
            raise ValueError("adaptive mode needs the estimator")


@dataclasses.dataclass
class LevelReport:
    level: int
    n_dofs: int
    values: np.ndarray
    j_c: float
    true_error: float | None
    eta_h: float | None
    sum_abs: float | None
    i_eff: float | None
    i_ind: float | None
    n_marked: int
    wall_time: float
    sigma: np.ndarray | None = None
    active: np.ndarray | None = None
    newton_iterations: int = 0


def mark(eta_i, alpha, mesh, pu, touch=None):
    """Active cells touching a PU DoF with ``|eta_i| >= alpha * sum|eta| / M_el``.

    ``pu`` is the Q1 handler of the mesh whose unconstrained DoFs ``eta_i``
    refers to.  Returns a sorted array of mesh cell ids.  If nothing
    qualifies while ``sum|eta| > 0``, the top 10 % of cells by indicator
    mass are marked instead.
    """
    eta_i = np.abs(np.asarray(eta_i, dtype=float))
    total = eta_i.sum()
    if total == 0.0:
        return np.zeros(0, dtype=np.int64)
    keep = np.ones(pu.n_dofs, dtype=bool)
    keep[list(pu.constraints)] = False
    dofs = np.flatnonzero(keep)
    if len(dofs) != len(eta_i):
        raise ValueError("one indicator per unconstrained PU DoF required")
    touch = touch if touch is not None else touching_cells(pu)
    thresh = alpha * total / mesh.n_active
    sel = set()
    for d in dofs[eta_i >= thresh]:
        sel.update(touch[int(d)].tolist())
    if not sel:
        full = np.zeros(pu.n_dofs)
        full[keep] = eta_i
        mass = np.zeros(mesh.n_active)
        for d, cells in touch.items():
            mass[cells] += full[d] / len(cells)
        n = max(1, int(np.ceil(0.1 * mesh.n_active)))
        sel = set(np.argsort(-mass, kind="stable")[:n].tolist())
        log.info("no cell above threshold; marking top %d cells", n)
    return np.sort(mesh.active[np.array(sorted(sel), dtype=np.int64)])


def true_error(case, values):
    """``|J_c(reference) - J_c(U_h)|`` with the plain weights; ``None`` without reference."""
    ref = case.jc_reference_value()
    if ref is None:
        return None
    return abs(ref - float(np.asarray(case.omega) @ values))


def estimate_level(case, problem, x, params: AdaptParams, omega=None):
    """Signs, enriched adjoint and estimator for one converged state.

    Returns ``(estimate, combined goal, adjoint, enriched problem)``.
    """
    omega = case.omega if omega is None else omega
    goals = case.goals
    prob_h = FsiProblem(problem.mesh, case.params, case.bcs, fields=ENRICHED_FIELDS,
                        npts=problem.npts, solid_pressure=case.solid_pressure)
    vals = goal_values(goals, problem, x)
    vh, _ = higher_order_values(goals, problem, x, prob_h, params.sign_method,
                                params.enriched_steps)
    sigma, active = compute_signs(goals, vals, vh)
    cg = CombinedGoal(goals, omega, sigma, active)
    adj = solve_enriched_adjoint(problem, x, prob_h, cg)
    if params.estimator == "full":
        xe, _ = enriched_primal_solve(problem, x, prob_h, params.enriched_steps)
        est = estimate_full(problem, prob_h, adj, xe, cg)
    else:
        est = estimate_primal(problem, prob_h, adj, params.half_factor)
    return est, cg, adj, prob_h


def adaptive_loop(case, params: AdaptParams | None = None, omega=None, callback=None):
    """Run the loop on ``case`` and return one :class:`LevelReport` per level.

    ``callback(report, data)`` is invoked after each level with ``data`` a
    dict holding ``mesh``, ``problem``, ``x``, ``estimate``, ``adjoint``,
    ``enriched`` and ``cell_eta`` (``None`` entries when not computed).
    """
    params = params or case.adapt
    omega = np.asarray(case.omega if omega is None else omega, dtype=float)
    mesh = case.build_mesh()
    reports = []
    prev = None
    for level in range(1, params.max_levels + 1):
        t0 = time.perf_counter()
        try:
            problem = FsiProblem(mesh, case.params, case.bcs, solid_pressure=case.solid_pressure)
            x0 = None
            if prev is not None:
                x0 = prolongate(prev[0].space, prev[1], problem.space)
                x0 = problem.amap.expand(problem.amap.restrict(x0))
            x, hist = problem.solve(x0)
            if problem.min_det(x) <= 0:
                raise TanglingError("deformation gradient determinant not positive")
        except Exception as exc:
            raise AdaptError(f"primal solve failed: {exc}", level) from exc
        vals = goal_values(case.goals, problem, x)
        err = true_error(case, vals) if np.array_equal(omega, case.omega) else \
            _true_error_weights(case, omega, vals)
        est = adj = prob_h = cg = None
        cell_eta = None
        if params.estimate:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("always", DegenerateGoalWarning)
                    est, cg, adj, prob_h = estimate_level(case, problem, x, params, omega)
            except Exception as exc:
                raise AdaptError(f"estimation failed: {exc}", level) from exc
            est.i_eff, est.i_ind = indices(est, err)
            cell_eta = cell_indicators(mesh, est)
        done = est is not None and abs(est.eta_h) <= params.tol
        last = level == params.max_levels or done
        marked = np.zeros(0, dtype=np.int64)
        if not last:
            if params.mode == "uniform":
                marked = mesh.active
            else:
                marked = mark(est.eta_i, params.alpha, mesh, est.pu)
        rep = LevelReport(
            level=level, n_dofs=problem.space.n_unknowns, values=vals,
            j_c=float(omega @ vals), true_error=err,
            eta_h=None if est is None else abs(est.eta_h),
            sum_abs=None if est is None else est.sum_abs,
            i_eff=None if est is None else est.i_eff,
            i_ind=None if est is None else est.i_ind,
            n_marked=len(marked), wall_time=time.perf_counter() - t0,
            sigma=None if cg is None else cg.sigma.copy(),
            active=None if cg is None else cg.active.copy(),
            newton_iterations=len(hist) - 1)
        reports.append(rep)
        log.info("level %d: %d dofs, J_c %.8e, err %s, eta %s, %.1fs", level, rep.n_dofs,
                 rep.j_c, rep.true_error, rep.eta_h, rep.wall_time)
        if callback is not None:
            callback(rep, dict(mesh=mesh, problem=problem, x=x, estimate=est, adjoint=adj,
                               enriched=prob_h, cell_eta=cell_eta))
        if last:
            break
        prev = (problem, x)
        if params.mode == "uniform":
            mesh = mesh.uniform_refine()
        else:
            mesh = mesh.refine_marked(marked)
    return reports


def _true_error_weights(case, omega, values):
    ref = case.reference_values()
    if ref is None:
        return None
    return abs(float(omega @ (ref - values)))


__all__ = ["AdaptError", "AdaptParams", "ErrorEstimate", "LevelReport", "adaptive_loop",
           "estimate_level", "mark", "true_error"]
