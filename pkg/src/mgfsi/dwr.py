"""Dual-weighted residual estimation with partition-of-unity localization.

With the enriched adjoint ``Z`` and its low-order interpolant ``i_a Z`` the
primal estimator is ``eta = -A(U_h)(Z - i_a Z)``.  The PU indicators use the
bilinear hat functions ``psi_i`` of the mesh (hanging nodes constrained),
``eta_i = -A(U_h)((Z - i_a Z) psi_i)``, so that ``sum_i eta_i = eta``.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings

import numpy as np

from .assembly import evaluate_state
from .fespace import DofHandler, inject, interpolate_down
from .goals import goal_pointwise, point_functional_vector
from .linsolve import Factorization
from .multigoal import CombinedGoal, DegenerateGoalWarning, combined_derivative

log = logging.getLogger(__name__)


@dataclasses.dataclass
class ErrorEstimate:
    eta_h: float
    eta_i: np.ndarray
    sum_abs: float
    pu: DofHandler
    eta_primal: float = 0.0
    eta_adjoint: float = 0.0
    i_eff: float | None = None
    i_ind: float | None = None
    reference: float | None = None


@dataclasses.dataclass
class AdjointSolution:
    z: np.ndarray             # enriched full vector
    x_lin: np.ndarray         # linearization point (injected primal)
    matrix: object = None     # full Jacobian at x_lin (rows test, cols trial)
    rhs: np.ndarray | None = None


def solve_enriched_adjoint(prob_low, x_low, prob_high, cg: CombinedGoal, keep_matrix=False):
    """Solve ``A'(U_h)(Phi, Z) = J_c'(U_h)(Phi)`` on the enriched space."""
    x_lin = inject(prob_low.space, prob_high.space, x_low)
    rhs = combined_derivative(cg, prob_high, x_lin)
    K = prob_high.jacobian_full(x_lin)
    if not np.any(rhs):
        warnings.warn("adjoint right-hand side vanishes; adjoint solution is zero",
                      DegenerateGoalWarning, stacklevel=2)
        return AdjointSolution(np.zeros(prob_high.space.n_dofs), x_lin,
                               K if keep_matrix else None, rhs)
    am = prob_high.amap
    A = (am.PT @ K.T @ am.P).tocsc()
    z = am.expand_homogeneous(Factorization(A).solve(am.PT @ rhs))
    return AdjointSolution(z, x_lin, K if keep_matrix else None, rhs)


def solve_low_adjoint(prob_low, x_lin_high, prob_high, cg: CombinedGoal):
    """Discrete adjoint on the low-order space (full vector, zero Dirichlet values)."""
    x_low = interpolate_down(prob_high.space, prob_low.space, x_lin_high)
    rhs = combined_derivative(cg, prob_low, x_low)
    if not np.any(rhs):
        return np.zeros(prob_low.space.n_dofs)
    am = prob_low.amap
    K = prob_low.jacobian_full(x_low)
    A = (am.PT @ K.T @ am.P).tocsc()
    return am.expand_homogeneous(Factorization(A).solve(am.PT @ rhs))


def interpolation_defect(space_high, space_low, z_high):
    """``Z - i_a Z`` as an enriched-space vector."""
    return z_high - inject(space_low, space_high, interpolate_down(space_high, space_low, z_high))


def _gather_pu(pu: DofHandler, raw):
    """Sum unconstrained hat-function contributions into constrained PU functions."""
    C = pu.constraint_matrix()
    out = C.T @ raw
    keep = np.ones(pu.n_dofs, dtype=bool)
    keep[list(pu.constraints)] = False
    return out, keep


def estimate_primal(prob_low, prob_high, adj: AdjointSolution, half_factor=False):
    """Primal DWR estimator and its PU localization."""
    space_h = prob_high.space
    y = interpolation_defect(space_h, prob_low.space, adj.z)
    pu = DofHandler(prob_high.mesh, 1)
    raw = -prob_high.localized_residual(adj.x_lin, y, pu)
    eta_full, keep = _gather_pu(pu, raw)
    eta_i = eta_full[keep]
    if half_factor:
        eta_i = 0.5 * eta_i
    eta = float(np.sum(eta_i))
    return ErrorEstimate(eta, eta_i, float(np.sum(np.abs(eta_i))), pu, eta_primal=eta)


def primal_residual_value(prob_high, x_lin, weight):
    """``-A(U_h)(weight)`` for an enriched-space weight vector."""
    return -float(prob_high.residual_full(x_lin) @ weight)


def estimate_full(prob_low, prob_high, adj: AdjointSolution, x_enriched, cg: CombinedGoal):
    """``1/2 rho(U_h)(Z - i_a Z) + 1/2 rho*(U_h, z_h)(U2 - i_p U2)``.

    ``x_enriched`` is an enriched-space primal approximation (e.g. from a
    budgeted Newton solve) and ``z_h`` the discrete adjoint of the low-order
    problem.  At the enriched ``Z`` the adjoint residual would vanish on the
    whole enriched test space; at ``z_h`` the two halves coincide for linear
    problems.  The primal weight is taken in the homogeneous space.
    """
    space_h, space_l = prob_high.space, prob_low.space
    pu = DofHandler(prob_high.mesh, 1)
    y = interpolation_defect(space_h, space_l, adj.z)
    raw_p = -prob_high.localized_residual(adj.x_lin, y, pu)
    w = interpolation_defect(space_h, space_l, x_enriched)
    w[prob_high.amap.fixed] = 0.0
    z_low = inject(space_l, space_h, solve_low_adjoint(prob_low, adj.x_lin, prob_high, cg))

    def adjoint_flux(form):
        def flux(S, ctx, z_state):
            return np.einsum("nis,nisjt->njt", z_state, form.tangent(S, ctx))
        return flux

    raw_a = -_weighted_bilinear(prob_high, adj.x_lin, adjoint_flux(prob_high.form), z_low, w, pu)
    raw_a -= _weighted_bilinear(prob_high, adj.x_lin, adjoint_flux(prob_high.mesh_form),
                                z_low, w, pu)
    for g, wi in zip(cg.goals, cg.w):
        if wi == 0.0:
            continue
        if g.kind == "point":
            raw_a += wi * _point_pu(space_h, g, w, pu)
        else:
            integ, gflux = goal_pointwise(g, prob_high)
            raw_a += wi * integ.weighted_vector(adj.x_lin, gflux, w, pu)
    eta_p, keep = _gather_pu(pu, 0.5 * raw_p)
    eta_a, _ = _gather_pu(pu, 0.5 * raw_a)
    eta_i = (eta_p + eta_a)[keep]
    est = ErrorEstimate(float(np.sum(eta_i)), eta_i, float(np.sum(np.abs(eta_i))), pu)
    est.eta_primal = float(np.sum(eta_p[keep]))
    est.eta_adjoint = float(np.sum(eta_a[keep]))
    return est


def _weighted_bilinear(prob, x_lin, flux_with_z, z, y, pu):
    """``sum_q w O(S, Z) : (Y psi_i)`` where the flux depends on the adjoint state too."""
    integ = prob.integrator
    out = np.zeros(pu.n_dofs)
    for pd in integ.groups():
        nc, nq = pd.weights.shape
        S = evaluate_state(prob.space, x_lin, pd)
        Zs = evaluate_state(prob.space, z, pd)
        Y = evaluate_state(prob.space, y, pd)
        O = flux_with_z(S, pd.ctx, Zs)
        a = np.einsum("ncs,ncs->n", O, Y).reshape(nc, nq) * pd.weights
        b = np.einsum("nci,nc->ni", O[:, :, 1:], Y[:, :, 0]).reshape(nc, nq, 2)
        b = b * pd.weights[..., None]
        tab = pd.shapes[1]
        loc = np.einsum("cqa,cq->ca", tab[..., 0], a) + np.einsum("cqai,cqi->ca", tab[..., 1:], b)
        out += np.bincount(pu.cell_dofs[pd.cells].ravel(), loc.ravel(), minlength=pu.n_dofs)
    return out


def _point_pu(space, goal, w, pu):
    """``w_c(x0) psi_i(x0)`` for all hat functions."""
    val = float(point_functional_vector(space, goal.component, goal.point) @ w)
    from .fespace import FieldSpec, FESpace
    q1 = FESpace(space.mesh, (FieldSpec("s", 1, 1),))
    return val * point_functional_vector(q1, 0, goal.point)


def indices(eta: ErrorEstimate | tuple, true_error):
    """Effectivity and indicator indices; ``None`` when the true error is zero."""
    eta_h, sum_abs = (eta.eta_h, eta.sum_abs) if isinstance(eta, ErrorEstimate) else eta
    if true_error is None or not np.isfinite(true_error) or true_error == 0:
        return None, None
    return abs(eta_h) / true_error, sum_abs / true_error


def cell_indicators(mesh, est: ErrorEstimate):
    """Distribute ``|eta_i|`` evenly to the cells touching DoF ``i`` (sums to sum_abs)."""
    pu = est.pu
    keep = np.ones(pu.n_dofs, dtype=bool)
    keep[list(pu.constraints)] = False
    full = np.zeros(pu.n_dofs)
    full[keep] = np.abs(est.eta_i)
    # cells touching a master through a hanging node count as touching it
    touch = _touching(pu)
    out = np.zeros(mesh.n_active)
    for i, cells in touch.items():
        if full[i]:
            out[cells] += full[i] / len(cells)
    return out


def _touching(pu: DofHandler):
    touch = {}
    for c, dofs in enumerate(pu.cell_dofs):
        for d in dofs:
            targets = [m for m, _ in pu.constraints[d]] if d in pu.constraints else [d]
            for t in targets:
                touch.setdefault(int(t), set()).add(c)
    return {k: np.array(sorted(v)) for k, v in touch.items()}


def touching_cells(pu: DofHandler):
    return _touching(pu)
