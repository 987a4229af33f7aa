"""Goal functionals and their derivatives.

Supported kinds:

``force``   fluid force on a body, ``-int (J sigma_f F^-T n_f)_k ds`` over
            fluid-side faces, where ``n_f`` is the outward normal of the
            fluid cell; component 0 is drag, 1 is lift
``point``   value of one solution component at a point
``flux``    ``int v . n ds`` over a boundary marker

Every goal is evaluated from a full coefficient vector of an
:class:`~mgfsi.fsi_model.FsiProblem` (primal or enriched space).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .assembly import Integrator
from .fsi_model import P, STATE_DIRECTIONS, UX, UY, VX, VY, _T, _tr, kinematics_at
from .fespace import lagrange_2d
from .mesh import FLUID, MeshError

COMPONENTS = {"vx": VX, "vy": VY, "ux": UX, "uy": UY, "p": P}


@dataclasses.dataclass(frozen=True)
class GoalSpec:
    kind: str
    name: str
    component: int = 0
    point: tuple | None = None
    markers: tuple = ()
    interface: bool = False

    def __post_init__(self):
        if self.kind not in ("force", "point", "flux"):
            raise ValueError(f"unknown goal kind {self.kind!r}")
        if self.kind == "force" and not (self.markers or self.interface):
            raise ValueError("force goal needs a path (markers and/or interface)")


def drag_lift(component, markers=(), interface=False, name=None):
    return GoalSpec("force", name or ("drag" if component == 0 else "lift"), component,
                    markers=tuple(markers), interface=interface)


def point_value(field, point, name=None):
    comp = COMPONENTS[field]
    return GoalSpec("point", name or f"{field}{tuple(point)}", comp, point=tuple(point))


def boundary_flux(marker, name="flux"):
    return GoalSpec("flux", name, markers=(marker,))


# ----------------------------------------------------------------------
def force_faces(mesh, goal):
    """(active index, local face, 0) triples of the fluid-side path faces."""
    pos = {int(c): i for i, c in enumerate(mesh.active)}
    out = []
    if goal.markers:
        for c, f, m in mesh.boundary_faces():
            if m in goal.markers and mesh.cell_material[c] == FLUID:
                out.append((pos[c], f, m))
    if goal.interface:
        out.extend((pos[c], f, 0) for c, f in mesh.interface_faces())
    if not out:
        raise MeshError(f"empty path for goal {goal.name!r}")
    return sorted(set(out))


def _force_flux(goal, rho_f, nu_f):
    k = goal.component

    def traction(S, ctx, dS=None):
        H = S[:, UX:UY + 1, 1:3]
        G = S[:, VX:VY + 1, 1:3]
        p = S[:, P, 0]
        kin = kinematics_at(H)
        J, Fi = kin.J, kin.Finv
        GFi = G @ Fi
        sig = -p[:, None, None] * np.eye(2) + rho_f * nu_f * (GFi + _T(GFi))
        n = ctx.normal
        if dS is None:
            return -np.einsum("n,nij,nj->ni", J, sig @ _T(Fi), n)[:, k]
        dH = dS[:, UX:UY + 1, 1:3]
        dJ = J * _tr(Fi @ dH)
        dFi = -Fi @ dH @ Fi
        dGFi = dS[:, VX:VY + 1, 1:3] @ Fi + G @ dFi
        dsig = -dS[:, P, 0][:, None, None] * np.eye(2) + rho_f * nu_f * (dGFi + _T(dGFi))
        dT = (dJ[:, None, None] * sig @ _T(Fi) + J[:, None, None] * dsig @ _T(Fi)
              + J[:, None, None] * sig @ _T(dFi))
        return -np.einsum("nij,nj->ni", dT, n)[:, k]

    return traction


def _flux_density(S, ctx, dS=None):
    src = S if dS is None else dS
    return np.einsum("ni,ni->n", src[:, VX:VY + 1, 0], ctx.normal)


def _integrator(problem, goal):
    mesh = problem.space.mesh
    if goal.kind == "force":
        faces = force_faces(mesh, goal)
    else:
        pos = {int(c): i for i, c in enumerate(mesh.active)}
        faces = [(pos[c], f, m) for c, f, m in mesh.boundary_faces() if m in goal.markers]
        if not faces:
            raise MeshError(f"empty boundary for goal {goal.name!r}")
    return Integrator(problem.space, problem.npts,
                      cell_filter=lambda m, c: np.zeros(len(c), dtype=bool), faces=faces)


def _density(problem, goal):
    if goal.kind == "force":
        return _force_flux(goal, problem.params.rho_f, problem.params.nu_f)
    return _flux_density


def eval_goal(goal: GoalSpec, problem, x_full):
    """Value of ``goal`` at the state ``x_full`` of ``problem``."""
    if goal.kind == "point":
        return float(problem.space.evaluate(x_full, goal.point, [goal.component])[0])
    dens = _density(problem, goal)
    return _integrator(problem, goal).functional(x_full, lambda S, ctx: dens(S, ctx))


def point_functional_vector(space, comp, point):
    """Coefficients ``phi_i(point)`` of component ``comp`` (unit vector at a node)."""
    mesh = space.mesh
    cell, xi = mesh.find_cell(point)
    k = int(np.searchsorted(mesh.active, cell))
    phi, _ = lagrange_2d(space.comp_degree[comp], xi[None])
    out = np.zeros(space.n_dofs)
    vals = phi[0].copy()
    vals[np.abs(vals) < 1e-14] = 0.0
    np.add.at(out, space.cell_dofs(comp)[k], vals)
    return out


def _grad_flux(dens):
    """Gradient of a scalar pointwise density with respect to the state slots."""

    def flux(S, ctx):
        out = np.zeros_like(S)
        for j, t in STATE_DIRECTIONS:
            dS = np.zeros_like(S)
            dS[:, j, t] = 1.0
            out[:, j, t] = dens(S, ctx, dS)
        return out

    return flux


def goal_derivative(goal: GoalSpec, problem, x_full):
    """``J'(U)(phi_i)`` for every basis function of ``problem.space``."""
    if goal.kind == "point":
        return point_functional_vector(problem.space, goal.component, goal.point)
    return _integrator(problem, goal).vector(x_full, _grad_flux(_density(problem, goal)))


def goal_pointwise(goal, problem):
    """Integrator and pointwise derivative flux of an integral goal."""
    return _integrator(problem, goal), _grad_flux(_density(problem, goal))
