"""Stationary monolithic ALE fluid-structure interaction.

Unknowns are velocity ``v``, displacement ``u`` and pressure ``p`` on the
reference domain.  State components are ordered ``(vx, vy, ux, uy, p)``.

The semi-linear form A(U)(Psi) has three blocks:

* momentum: fluid convection and stress in the fluid, St. Venant-Kirchhoff
  stress in the solid, body forces and pressure (do-nothing) boundaries;
* displacement: ``(v, psi_u)`` in the solid and harmonic mesh motion
  ``(alpha_u grad u, grad psi_u)`` in the fluid;
* continuity: ``(J tr(grad v F^-1), psi_p)`` in the fluid.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Callable

import numpy as np

from .assembly import Integrator, evaluate_state, tangent_from_directional
from .fespace import PRIMAL_FIELDS, FESpace
from .linsolve import NewtonSettings, newton_solve
from .mesh import FLUID, SOLID, QuadMesh

log = logging.getLogger(__name__)

VX, VY, UX, UY, P = range(5)
# state slots the form depends on: values and gradients of v, u and the pressure value
STATE_DIRECTIONS = [(c, s) for c in range(4) for s in range(3)] + [(P, 0)]


class TanglingError(ValueError):
    """Raised when the deformation gradient has non-positive determinant."""


@dataclasses.dataclass
class MaterialParams:
    """Material data in SI units.

    ``lam_s`` is derived from ``mu_s`` and ``nu_s``.  Body forces are
    callables ``f(x, y) -> (fx, fy)`` or ``None``.
    """

    rho_f: float
    nu_f: float
    rho_s: float
    mu_s: float
    nu_s: float
    alpha_u: float = 1e-9
    convection: float = 1.0
    f_f: Callable | None = None
    f_s: Callable | None = None

    def __post_init__(self):
        if min(self.rho_f, self.nu_f, self.rho_s, self.mu_s) <= 0:
            raise ValueError("densities, viscosity and shear modulus must be positive")
        if not (-1.0 < self.nu_s < 0.5):
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")
        if self.alpha_u <= 0:
            raise ValueError("alpha_u must be positive")

    @property
    def lam_s(self):
        return 2.0 * self.mu_s * self.nu_s / (1.0 - 2.0 * self.nu_s)

    def as_dict(self):
        d = {k: v for k, v in dataclasses.asdict(self).items() if not callable(v) and v is not None}
        d["lam_s"] = self.lam_s
        return d


@dataclasses.dataclass
class Kinematics:
    F: np.ndarray
    J: np.ndarray
    Finv: np.ndarray
    FinvT: np.ndarray
    E: np.ndarray


def _det(a):
    return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]


def _inv(a, det):
    out = np.empty_like(a)
    out[..., 0, 0] = a[..., 1, 1]
    out[..., 1, 1] = a[..., 0, 0]
    out[..., 0, 1] = -a[..., 0, 1]
    out[..., 1, 0] = -a[..., 1, 0]
    return out / det[..., None, None]


def _tr(a):
    return a[..., 0, 0] + a[..., 1, 1]


def _T(a):
    return np.swapaxes(a, -1, -2)


def kinematics_at(grad_u, where=None):
    """Deformation quantities for displacement gradient(s) ``grad_u`` (..., 2, 2)."""
    H = np.asarray(grad_u, dtype=float)
    F = np.eye(2) + H
    J = _det(F)
    if np.any(J <= 0):
        bad = np.flatnonzero(np.atleast_1d(J) <= 0)
        loc = f" at {where[bad[0]]}" if where is not None else ""
        raise TanglingError(f"non-positive Jacobian det(F) = {np.min(J):.3e}{loc}")
    Fi = _inv(F, J)
    E = 0.5 * (_T(F) @ F - np.eye(2))
    return Kinematics(F, J, Fi, _T(Fi), E)


def stress_fluid(kin: Kinematics, grad_v, p, rho_f, nu_f):
    """Cauchy stress pulled back to the reference frame (not yet Piola mapped)."""
    GFi = np.asarray(grad_v) @ kin.Finv
    p = np.asarray(p, dtype=float)
    return -p[..., None, None] * np.eye(2) + rho_f * nu_f * (GFi + _T(GFi))


def stress_solid_stvk(kin: Kinematics, lam_s, mu_s):
    """First Piola-Kirchhoff stress ``F (lam tr(E) I + 2 mu E)``."""
    S = lam_s * _tr(kin.E)[..., None, None] * np.eye(2) + 2.0 * mu_s * kin.E
    return kin.F @ S


def _body(f, x, n):
    if f is None:
        return None
    val = np.asarray(f(x[:, 0], x[:, 1]), dtype=float)
    return np.broadcast_to(val.T if val.shape[0] == 2 else val, (n, 2))


# ----------------------------------------------------------------------
# pointwise fluxes
class FsiForm:
    """Pointwise flux and its linearization for the FSI semi-linear form.

    The harmonic mesh-motion term is not included; see :class:`MeshMotionForm`.
    """

    def __init__(self, params: MaterialParams, pressure_bc=None, solid_pressure="constrain"):
        self.params = params
        self.pressure_bc = dict(pressure_bc or {})
        if solid_pressure not in ("constrain", "mass"):
            raise ValueError(f"unknown solid pressure treatment {solid_pressure!r}")
        self.solid_pressure = solid_pressure

    # -- cells ---------------------------------------------------------
    def flux(self, S, ctx):
        if ctx.normal is not None:
            return self._face(S, ctx, None)
        return self._cell(S, ctx, None)

    def dflux(self, S, dS, ctx):
        if ctx.normal is not None:
            return self._face(S, ctx, dS)
        return self._cell(S, ctx, dS)

    def tangent(self, S, ctx):
        return tangent_from_directional(self.dflux, S, ctx, STATE_DIRECTIONS)

    def _cell(self, S, ctx, dS):
        prm = self.params
        n = len(S)
        O = np.zeros_like(S)
        H = S[:, UX:UY + 1, 1:3]
        fl = ctx.material == FLUID
        so = ~fl
        kin = kinematics_at(H, ctx.x)
        F, J, Fi = kin.F, kin.J, kin.Finv
        if dS is not None:
            dH = dS[:, UX:UY + 1, 1:3]
            dJ = J * _tr(Fi @ dH)
            dFi = -Fi @ dH @ Fi
        if np.any(fl):
            m = fl
            v = S[m, VX:VY + 1, 0]
            G = S[m, VX:VY + 1, 1:3]
            p = S[m, P, 0]
            Jm, Fim = J[m], Fi[m]
            GFi = G @ Fim
            sigma = -p[:, None, None] * np.eye(2) + prm.rho_f * prm.nu_f * (GFi + _T(GFi))
            ff = _body(prm.f_f, ctx.x[m], m.sum())
            if dS is None:
                conv = prm.rho_f * Jm[:, None] * np.einsum("nij,nj->ni", GFi, v)
                O[m, VX:VY + 1, 0] = prm.convection * conv
                if ff is not None:
                    O[m, VX:VY + 1, 0] -= prm.rho_f * Jm[:, None] * ff
                O[m, VX:VY + 1, 1:3] = Jm[:, None, None] * sigma @ _T(Fim)
                O[m, P, 0] = Jm * _tr(GFi)
            else:
                dv = dS[m, VX:VY + 1, 0]
                dG = dS[m, VX:VY + 1, 1:3]
                dp = dS[m, P, 0]
                dJm, dFim = dJ[m], dFi[m]
                dGFi = dG @ Fim + G @ dFim
                dconv = prm.rho_f * (dJm[:, None] * np.einsum("nij,nj->ni", GFi, v)
                                     + Jm[:, None] * np.einsum("nij,nj->ni", dGFi, v)
                                     + Jm[:, None] * np.einsum("nij,nj->ni", GFi, dv))
                O[m, VX:VY + 1, 0] = prm.convection * dconv
                if ff is not None:
                    O[m, VX:VY + 1, 0] -= prm.rho_f * dJm[:, None] * ff
                dsigma = -dp[:, None, None] * np.eye(2) + prm.rho_f * prm.nu_f * (dGFi + _T(dGFi))
                O[m, VX:VY + 1, 1:3] = (dJm[:, None, None] * sigma @ _T(Fim)
                                        + Jm[:, None, None] * dsigma @ _T(Fim)
                                        + Jm[:, None, None] * sigma @ _T(dFim))
                O[m, P, 0] = dJm * _tr(GFi) + Jm * _tr(dGFi)
        if np.any(so):
            m = so
            Fm = F[m]
            E = kin.E[m]
            lam, mu = prm.lam_s, prm.mu_s
            Sig = lam * _tr(E)[:, None, None] * np.eye(2) + 2 * mu * E
            fs = _body(prm.f_s, ctx.x[m], m.sum())
            if dS is None:
                O[m, VX:VY + 1, 1:3] = Fm @ Sig
                if fs is not None:
                    O[m, VX:VY + 1, 0] = -prm.rho_s * fs
                O[m, UX:UY + 1, 0] = S[m, VX:VY + 1, 0]
                if self.solid_pressure == "mass":
                    O[m, P, 0] = S[m, P, 0]
            else:
                dF = dS[m, UX:UY + 1, 1:3]
                dE = 0.5 * (_T(dF) @ Fm + _T(Fm) @ dF)
                dSig = lam * _tr(dE)[:, None, None] * np.eye(2) + 2 * mu * dE
                O[m, VX:VY + 1, 1:3] = dF @ Sig + Fm @ dSig
                O[m, UX:UY + 1, 0] = dS[m, VX:VY + 1, 0]
                if self.solid_pressure == "mass":
                    O[m, P, 0] = dS[m, P, 0]
        assert O.shape == (n, 5, 3)
        return O

    # -- pressure (do-nothing) boundaries -------------------------------
    def _face(self, S, ctx, dS):
        """Pressure boundary: traction ``-P J F^-T n`` plus the do-nothing correction."""
        prm = self.params
        O = np.zeros_like(S)
        Pval = np.array([self.pressure_bc.get(int(m), 0.0) for m in ctx.marker])
        nrm = ctx.normal
        H = S[:, UX:UY + 1, 1:3]
        G = S[:, VX:VY + 1, 1:3]
        kin = kinematics_at(H, ctx.x)
        J, Fi = kin.J, kin.Finv
        FiT = _T(Fi)
        rn = prm.rho_f * prm.nu_f
        FiTn = np.einsum("nij,nj->ni", FiT, nrm)
        corr = np.einsum("nij,nj->ni", FiT @ _T(G), FiTn)
        if dS is None:
            O[:, VX:VY + 1, 0] = (Pval * J)[:, None] * FiTn - rn * J[:, None] * corr
            return O
        dH = dS[:, UX:UY + 1, 1:3]
        dG = dS[:, VX:VY + 1, 1:3]
        dJ = J * _tr(Fi @ dH)
        dFiT = _T(-Fi @ dH @ Fi)
        dFiTn = np.einsum("nij,nj->ni", dFiT, nrm)
        dcorr = (np.einsum("nij,nj->ni", dFiT @ _T(G) + FiT @ _T(dG), FiTn)
                 + np.einsum("nij,nj->ni", FiT @ _T(G), dFiTn))
        O[:, VX:VY + 1, 0] = ((Pval * dJ)[:, None] * FiTn + (Pval * J)[:, None] * dFiTn
                              - rn * (dJ[:, None] * corr + J[:, None] * dcorr))
        return O


class MeshMotionForm:
    """``(alpha_u grad u, grad psi_u)`` on fluid cells (linear in ``u``)."""

    directions = [(c, s) for c in (UX, UY) for s in (1, 2)]

    def __init__(self, alpha_u):
        self.alpha_u = alpha_u

    def flux(self, S, ctx):
        O = np.zeros_like(S)
        if ctx.normal is None:
            fl = ctx.material == FLUID
            O[fl, UX:UY + 1, 1:3] = self.alpha_u * S[fl, UX:UY + 1, 1:3]
        return O

    def tangent(self, S, ctx):
        return tangent_from_directional(lambda S, dS, ctx: self.flux(dS, ctx), S, ctx,
                                        self.directions)


# ----------------------------------------------------------------------
# boundary conditions
@dataclasses.dataclass
class BoundaryConditions:
    """Boundary data by marker.

    velocity : marker -> (fx, fy) callables of (x, y) or constants
    displacement : marker -> (fx, fy)
    pressure : marker -> prescribed pressure (do-nothing type)
    pressure_pin : point whose nearest pressure vertex is fixed to zero
    """

    velocity: dict = dataclasses.field(default_factory=dict)
    displacement: dict = dataclasses.field(default_factory=dict)
    pressure: dict = dataclasses.field(default_factory=dict)
    pressure_pin: tuple | None = None


def face_local_nodes(k, face):
    n1 = k + 1
    if face == 0:
        return [i for i in range(n1)]
    if face == 1:
        return [j * n1 + k for j in range(n1)]
    if face == 2:
        return [k * n1 + i for i in range(n1)]
    return [j * n1 for j in range(n1)]


def boundary_dofs(space: FESpace, comp, markers):
    """Full-vector DoFs of component ``comp`` on faces with the given markers."""
    mesh = space.mesh
    pos = {int(c): i for i, c in enumerate(mesh.active)}
    k = space.comp_degree[comp]
    dofs = space.cell_dofs(comp)
    out = set()
    for c, f, m in mesh.boundary_faces():
        if m in markers:
            out.update(dofs[pos[c], face_local_nodes(k, f)].tolist())
    return np.array(sorted(out), dtype=np.int64)


def _value(f, pts):
    if callable(f):
        return np.broadcast_to(np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float), len(pts))
    return np.full(len(pts), float(f))


def apply_boundary_conditions(space: FESpace, bcs: BoundaryConditions, solid_pressure="constrain"):
    """Dirichlet value map ``full DoF -> value``."""
    mesh = space.mesh
    known = {m for _, _, m in mesh.boundary_faces()}
    for table in (bcs.velocity, bcs.displacement, bcs.pressure):
        for m in table:
            if m not in known:
                raise ValueError(f"unknown boundary marker {m}")
    dirichlet = {}
    for field, table in (("v", bcs.velocity), ("u", bcs.displacement)):
        comps = space.field_components(field)
        for m in sorted(table):
            for comp, f in zip(comps, table[m]):
                dofs = boundary_dofs(space, comp, {m})
                pts = space.handler(comp).node_points()[dofs - space.comp_offset[comp]]
                dirichlet.update(zip(dofs.tolist(), _value(f, pts).tolist()))
    pc = space.field_components("p")[0]
    off = space.comp_offset[pc]
    if solid_pressure == "constrain":
        for d in solid_pressure_dofs(space, pc):
            dirichlet[int(d)] = 0.0
    if bcs.pressure_pin is not None:
        h = space.handler(pc)
        pts = h.node_points()
        cand = np.array([i for i in range(h.n_dofs)
                         if i not in h.constraints and i + off not in dirichlet])
        i = cand[np.argmin(np.linalg.norm(pts[cand] - np.asarray(bcs.pressure_pin), axis=1))]
        dirichlet[int(i + off)] = 0.0
    return dirichlet


def solid_pressure_dofs(space: FESpace, pc):
    """Pressure DoFs (non-hanging) that do not influence any fluid cell."""
    mesh = space.mesh
    h = space.handler(pc)
    fluid = mesh.cell_material[mesh.active] == FLUID
    touched = np.zeros(h.n_dofs, dtype=bool)
    touched[np.unique(h.cell_dofs[fluid])] = True
    for s, lst in h.constraints.items():
        if touched[s]:
            for mm, _ in lst:
                touched[mm] = True
    free = np.ones(h.n_dofs, dtype=bool)
    free[list(h.constraints)] = False
    return np.flatnonzero(~touched & free) + space.comp_offset[pc]


def _fluid_cells(mesh, cells):
    return mesh.cell_material[mesh.active[cells]] == FLUID


# ----------------------------------------------------------------------
class FsiProblem:
    """Discrete FSI problem on one mesh and space.

    Parameters
    ----------
    mesh : QuadMesh
    params : MaterialParams
    bcs : BoundaryConditions
    fields : field layout (primal Q2/Q2/Q1 by default)
    npts : Gauss points per direction used for every integral
    solid_pressure : "constrain" fixes pressure DoFs that only touch solid
        cells, "mass" adds ``(p, psi_p)`` on the solid instead
    """

    def __init__(self, mesh: QuadMesh, params: MaterialParams, bcs: BoundaryConditions,
                 fields=PRIMAL_FIELDS, npts=5, solid_pressure="constrain"):
        self.mesh = mesh
        self.params = params
        self.bcs = bcs
        self.space = FESpace(mesh, fields)
        self.form = FsiForm(params, bcs.pressure, solid_pressure)
        self.dirichlet = apply_boundary_conditions(self.space, bcs, solid_pressure)
        self.amap = self.space.affine_map(self.dirichlet)
        pos = {int(c): i for i, c in enumerate(mesh.active)}
        faces = [(pos[c], f, m) for c, f, m in mesh.boundary_faces() if m in bcs.pressure]
        self.integrator = Integrator(self.space, npts, faces=faces)
        self.npts = npts
        self.mesh_form = MeshMotionForm(params.alpha_u)
        self._mesh_matrix = None

    @property
    def mesh_matrix(self):
        """Constant matrix of the mesh-motion term."""
        if self._mesh_matrix is None:
            integ = Integrator(self.space, self.npts, cell_filter=_fluid_cells)
            K = integ.matrix(np.zeros(self.space.n_dofs), self.mesh_form.tangent)
            self._mesh_matrix = K.tocsr()
        return self._mesh_matrix

    def localized_residual(self, x_full, y_full, pu):
        """``A(U)(Y psi_i)`` for every hat function ``psi_i`` of ``pu``."""
        integ = self.integrator
        return (integ.weighted_vector(x_full, self.form.flux, y_full, pu)
                + integ.weighted_vector(x_full, self.mesh_form.flux, y_full, pu))

    # full-vector level
    def residual_full(self, x_full):
        """``A(U)(phi_i)`` for every basis function of the space."""
        x_full = np.asarray(x_full, dtype=float)
        return self.integrator.vector(x_full, self.form.flux) + self.mesh_matrix @ x_full

    def jacobian_full(self, x_full):
        """``K[i, j] = A'(U)(phi_j, phi_i)`` (rows: test, columns: trial)."""
        return (self.integrator.matrix(x_full, self.form.tangent) + self.mesh_matrix).tocsr()

    # reduced level
    def residual(self, x_free):
        return self.amap.reduce_vector(self.residual_full(self.amap.expand(x_free)))

    def jacobian(self, x_free):
        return self.amap.reduce_matrix(self.jacobian_full(self.amap.expand(x_free)))

    def initial_guess(self):
        return self.amap.expand(np.zeros(self.amap.n_free))

    def solve(self, x0_full=None, settings=None, fixed_steps=None):
        """Newton solve; returns the full solution vector and the iteration log."""
        x0 = self.initial_guess() if x0_full is None else x0_full
        z, hist = newton_solve(self.residual, self.jacobian, self.amap.restrict(x0),
                               settings or NewtonSettings(), fixed_steps=fixed_steps)
        log.info("newton: %d iterations, |r| %.3e -> %.3e", len(hist) - 1,
                 hist[0]["res"], hist[-1]["res"])
        return self.amap.expand(z), hist

    def adjoint_system(self, x_full, rhs_full):
        """Reduced adjoint matrix ``P^T K^T P`` and right-hand side ``P^T j``."""
        K = self.jacobian_full(x_full)
        PT, Pm = self.amap.PT, self.amap.P
        return (PT @ K.T @ Pm).tocsc(), PT @ rhs_full

    def min_det(self, x_full):
        """Smallest det(F) over all cell quadrature points."""
        out = np.inf
        for pd in self.integrator.groups():
            if pd.ctx.normal is not None:
                continue
            S = evaluate_state(self.space, x_full, pd)
            H = S[:, UX:UY + 1, 1:3]
            out = min(out, float(np.min(_det(np.eye(2) + H))))
        return out

