"""Bundled case configurations and manufactured-solution verification.

A :class:`CaseConfig` is plain data: geometry id, material parameters,
a boundary-condition table with string expressions in ``x`` and ``y``,
goal list with weights, reference values (reporting only) and adaptivity
defaults.  It round-trips through an INI-style text format
(:func:`case_to_text`, :func:`case_from_text`).
"""

from __future__ import annotations

import configparser
import dataclasses
import functools
import io
import math
from pathlib import Path

import numpy as np
import sympy

from .adapt import AdaptParams
from .assembly import Integrator
from .fsi_model import BoundaryConditions, FsiProblem, MaterialParams
from .goals import COMPONENTS, GoalSpec, boundary_flux, drag_lift, point_value
from .mesh import FLUID, SOLID, Circle, MeshError, QuadMesh, read_mesh

FIELD_NAMES = {v: k for k, v in COMPONENTS.items()}
_X, _Y = sympy.symbols("x y", real=True)


# ----------------------------------------------------------------------
# expressions
@functools.lru_cache(maxsize=None)
def _sym(text):
    return sympy.sympify(str(text), locals={"x": _X, "y": _Y})


def expression(text):
    """Vectorized callable ``f(x, y)`` for a sympy expression string."""
    e = _sym(text)
    if not e.free_symbols:
        return float(e)
    f = sympy.lambdify((_X, _Y), e, "numpy")
    return lambda x, y: np.broadcast_to(np.asarray(f(x, y), dtype=float), np.shape(x))


def _vector_expression(pair):
    fs = [expression(t) for t in pair]

    def f(x, y):
        return np.stack([np.broadcast_to(fi(x, y) if callable(fi) else fi, np.shape(x))
                         for fi in fs])

    return f


# ----------------------------------------------------------------------
# geometry
class _Builder:
    """Collects quads by corner coordinates and merges coincident vertices."""

    def __init__(self):
        self.index = {}
        self.vertices = []
        self.cells = []
        self.mats = []

    def vertex(self, p):
        key = (round(float(p[0]), 10), round(float(p[1]), 10))
        if key not in self.index:
            self.index[key] = len(self.vertices)
            self.vertices.append((float(p[0]), float(p[1])))
        return self.index[key]

    def quad(self, corners, material):
        self.cells.append(tuple(self.vertex(p) for p in corners))
        self.mats.append(material)

    def build(self, marker, curved=None):
        count = {}
        for c in self.cells:
            for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
                key = tuple(sorted((c[a], c[b])))
                count[key] = count.get(key, 0) + 1
        V = np.array(self.vertices)
        faces = []
        for (a, b), n in sorted(count.items()):
            if n == 1:
                faces.append((a, b, marker(V[a], V[b])))
        return QuadMesh.from_arrays(V, self.cells, self.mats, faces, curved)


def _linspace(a, b, n):
    return np.linspace(a, b, n + 1)[:-1].tolist()


def ex1_mesh():
    """Cavity (0,2)^2 with an elastic layer below y = 0.5; two cells."""
    return QuadMesh.tensor_grid([0.0, 2.0], [0.0, 0.5, 2.0],
                                material=lambda x, y: SOLID if y < 0.5 else FLUID)


def ex2_mesh():
    """Chamber with an elastic bar and a small outlet channel (reconstructed).

    Chamber ``[0, 2.5] x [0, 1]``, outlet channel ``[2.5, 3] x [0.75, 1]``,
    bar ``[2.1, 2.2] x [0, 0.75]`` fixed to the bottom wall.  Markers: 1 left
    inlet, 2 channel outlet, 3 walls.  The grid is sized so the primal space
    has about 2100 DoFs after one refinement.
    """
    xs = _linspace(0.0, 2.1, 5) + [2.1, 2.2, 2.5, 3.0]
    ys = [0.0, 0.25, 0.5, 0.75, 1.0]
    b = _Builder()
    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            x0, x1, y0, y1 = xs[i], xs[i + 1], ys[j], ys[j + 1]
            xc, yc = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            if xc > 2.5 and yc < 0.75:
                continue
            mat = SOLID if (2.1 < xc < 2.2 and yc < 0.75) else FLUID
            b.quad([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], mat)

    def marker(a, c):
        if abs(a[0]) < 1e-12 and abs(c[0]) < 1e-12:
            return 1
        if abs(a[0] - 3.0) < 1e-12 and abs(c[0] - 3.0) < 1e-12:
            return 2
        return 3

    return b.build(marker)


FSI1_CENTER = (0.2, 0.2)
FSI1_RADIUS = 0.05
FSI1_LENGTH = 2.5
FSI1_HEIGHT = 0.41


def fsi1_mesh(n_wake=16, ring=2):
    """Channel with cylinder and attached elastic beam (coarse quad mesh).

    An O-grid with ``ring`` radial layers surrounds the cylinder inside the
    square ``[0.1, 0.3]^2``; the beam ``[x_a, 0.6] x [0.19, 0.21]`` is solid,
    ``x_a`` being where it meets the circle.  Markers: 1 inlet, 2 outlet,
    3 walls, 4 cylinder (curved).
    """
    cx, cy = FSI1_CENTER
    r = FSI1_RADIUS
    xa = cx + math.sqrt(r * r - 0.01 ** 2)
    xs = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
    # wake cells grow geometrically from x = 0.8 to the outlet
    xs += (0.6 + np.geomspace(0.2, FSI1_LENGTH - 0.6, n_wake + 1)[1:]).tolist()
    ys = [0.0, 0.05, 0.1, 0.19, 0.21, 0.3, 0.355, 0.41]
    b = _Builder()
    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            x0, x1, y0, y1 = xs[i], xs[i + 1], ys[j], ys[j + 1]
            xc, yc = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            if 0.1 < xc < 0.3 and 0.1 < yc < 0.3:
                continue
            mat = SOLID if (0.3 < xc < 0.6 and 0.19 < yc < 0.21) else FLUID
            b.quad([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], mat)
    # O-grid: square boundary points counterclockwise and their circle images
    square = [(0.3, 0.1), (0.3, 0.19), (0.3, 0.21), (0.3, 0.3), (0.2, 0.3), (0.1, 0.3),
              (0.1, 0.21), (0.1, 0.19), (0.1, 0.1), (0.2, 0.1)]
    circle = []
    for sx, sy in square:
        if sx == 0.3 and sy in (0.19, 0.21):
            circle.append((xa, sy))
        else:
            t = math.atan2(sy - cy, sx - cx)
            circle.append((cx + r * math.cos(t), cy + r * math.sin(t)))
    ts = np.linspace(0.0, 1.0, ring + 1)
    for k in range(len(square)):
        k1 = (k + 1) % len(square)
        solid = k == 1          # sector between the beam attachment points
        for a, c in zip(ts[:-1], ts[1:]):
            p = lambda s, t: tuple(np.add(circle[s], t * np.subtract(square[s], circle[s])))  # noqa: E731
            b.quad([p(k, a), p(k, c), p(k1, c), p(k1, a)], SOLID if solid else FLUID)

    def marker(a, c):
        if abs(a[0]) < 1e-12 and abs(c[0]) < 1e-12:
            return 1
        if abs(a[0] - FSI1_LENGTH) < 1e-12 and abs(c[0] - FSI1_LENGTH) < 1e-12:
            return 2
        if max(abs(a[1]), abs(c[1])) < 1e-12 or min(a[1], c[1]) > FSI1_HEIGHT - 1e-12:
            return 3
        return 4

    return b.build(marker, {4: Circle(FSI1_CENTER, FSI1_RADIUS)})


def unit_square(nx=2, material=FLUID):
    return QuadMesh.rectangle(0.0, 1.0, 0.0, 1.0, nx, nx, material=material)


GEOMETRIES = {
    "ex1": ex1_mesh,
    "ex2": ex2_mesh,
    "fsi1": fsi1_mesh,
    "unit_fluid": lambda: unit_square(2, FLUID),
    "unit_solid": lambda: unit_square(2, SOLID),
}


def load_geometry(spec):
    """``builtin:<id>`` or a path to a mesh file."""
    spec = str(spec)
    if spec.startswith("builtin:"):
        key = spec.split(":", 1)[1]
        if key not in GEOMETRIES:
            raise KeyError(f"unknown builtin geometry {key!r}")
        return GEOMETRIES[key]()
    return read_mesh(Path(spec))


# ----------------------------------------------------------------------
# case data
@dataclasses.dataclass
class BoundaryTable:
    """Marker-wise boundary data as expression strings."""

    velocity: dict = dataclasses.field(default_factory=dict)      # marker -> (ex, ey)
    displacement: dict = dataclasses.field(default_factory=dict)  # marker -> (ex, ey)
    pressure: dict = dataclasses.field(default_factory=dict)      # marker -> value
    pressure_pin: tuple | None = None

    def build(self):
        return BoundaryConditions(
            velocity={m: tuple(expression(e) for e in v) for m, v in self.velocity.items()},
            displacement={m: tuple(expression(e) for e in v)
                          for m, v in self.displacement.items()},
            pressure={m: float(v) for m, v in self.pressure.items()},
            pressure_pin=self.pressure_pin)

    def markers(self):
        return set(self.velocity) | set(self.displacement) | set(self.pressure)


@dataclasses.dataclass
class CaseConfig:
    name: str
    geometry: str
    materials: dict
    boundary: BoundaryTable
    goals: list
    omega: list
    references: dict = dataclasses.field(default_factory=dict)   # goal name -> (value, source)
    jc_reference: tuple | None = None                           # (value, source)
    monitors: list = dataclasses.field(default_factory=list)
    adapt: AdaptParams = dataclasses.field(default_factory=AdaptParams)
    refinements: int = 0
    solid_pressure: str = "constrain"
    description: str = ""
    forcing: dict = dataclasses.field(default_factory=dict)      # "f_f"/"f_s" -> (ex, ey)

    def __post_init__(self):
        if len(self.omega) != len(self.goals):
            raise ValueError("one weight per goal required")
        self.omega = [float(w) for w in self.omega]

    @functools.cached_property
    def params(self):
        kw = dict(self.materials)
        for key, pair in self.forcing.items():
            kw[key] = _vector_expression(pair)
        return MaterialParams(**kw)

    @functools.cached_property
    def bcs(self):
        return self.boundary.build()

    def build_mesh(self):
        mesh = load_geometry(self.geometry)
        for _ in range(self.refinements):
            mesh = mesh.uniform_refine()
        known = {m for _, _, m in mesh.boundary_faces()}
        missing = self.boundary.markers() - known
        if missing:
            raise MeshError(f"boundary markers {sorted(missing)} not present in the mesh")
        return mesh

    def reference_values(self):
        """Per-goal reference values, or ``None`` if any is missing."""
        try:
            return np.array([self.references[g.name][0] for g in self.goals])
        except KeyError:
            return None

    def jc_reference_value(self):
        if self.jc_reference is not None:
            return float(self.jc_reference[0])
        ref = self.reference_values()
        return None if ref is None else float(np.dot(self.omega, ref))

    def problem(self, mesh=None, **kw):
        return FsiProblem(mesh if mesh is not None else self.build_mesh(), self.params,
                          self.bcs, solid_pressure=self.solid_pressure, **kw)


_ZERO = ("0", "0")
_EX1_LID = ("Piecewise((0.5*sin(pi*x/0.6)**2, x <= 0.3), "
            "(0.5*sin(pi*(x - 2)/0.6)**2, x >= 1.7), (0.5, True))")
_FSI1_INFLOW = "1.5*0.2*4*y*(0.41 - y)/0.41**2"


def _ex1():
    src = "Example 1, individual reference values"
    return CaseConfig(
        name="ex1", geometry="builtin:ex1", refinements=1,
        description="lid-driven cavity with an elastic bottom layer",
        materials=dict(rho_f=1.0, nu_f=0.2, rho_s=1.0, nu_s=0.4, mu_s=2.0),
        boundary=BoundaryTable(
            velocity={1: _ZERO, 2: _ZERO, 3: (_EX1_LID, "0"), 4: _ZERO},
            displacement={m: _ZERO for m in (1, 2, 3, 4)},
            pressure_pin=None),
        goals=[drag_lift(0, interface=True, name="drag"), point_value("ux", (1.5, 0.25), "J2")],
        omega=[0.5, 0.5],
        references={"drag": (-9.3543731705807223e-02, src), "J2": (-4.6898353874198270e-03, src)},
        jc_reference=(-4.91167835466135e-02, "Example 1, weighted sum of the reference values"),
        adapt=AdaptParams(max_levels=6))


def _ex2():
    return CaseConfig(
        name="ex2", geometry="builtin:ex2", refinements=1,
        description="elastic bar in a chamber (geometry reconstructed, not authoritative)",
        materials=dict(rho_f=1000.0, nu_f=0.001, rho_s=1000.0, nu_s=0.4, mu_s=500.0),
        boundary=BoundaryTable(
            velocity={3: _ZERO},
            displacement={m: _ZERO for m in (1, 2, 3)},
            pressure={1: 0.2, 2: 0.0}),
        goals=[drag_lift(0, interface=True, name="drag"), point_value("p", (2.0, 0.5), "J2")],
        omega=[1.0, 1.0],
        jc_reference=(2.7072783350606711e-01, "Example 2, reference J_c (original geometry)"),
        adapt=AdaptParams(max_levels=6))


def _ex3():
    fin = "Example 3, final multigoal values"
    bench = "Example 3, final benchmark values"
    return CaseConfig(
        name="ex3", geometry="builtin:fsi1", refinements=1,
        description="FSI-1 channel flow around a cylinder with an elastic beam",
        materials=dict(rho_f=1000.0, nu_f=0.001, rho_s=100.0, nu_s=0.4, mu_s=5e5),
        boundary=BoundaryTable(
            velocity={1: (_FSI1_INFLOW, "0"), 3: _ZERO, 4: _ZERO},
            displacement={m: _ZERO for m in (1, 2, 3, 4)},
            pressure={2: 0.0}),
        goals=[drag_lift(0, markers=(4,), interface=True, name="drag"),
               point_value("p", (1.5, 0.3), "pressure"), boundary_flux(2, "flux")],
        omega=[1.0, 1.0, 1.0],
        references={"drag": (1.5351737833128903e+01, fin), "pressure": (1.5766176006021523e+01, fin),
                    "flux": (8.1999999975009522e-02, fin),
                    "lift": (7.3885947240664507e-01, bench),
                    "disx": (2.2657479709296053e-05, bench),
                    "disy": (8.2001891962646791e-04, bench)},
        jc_reference=(3.1205264275814216e+01, "Example 3, reference J_c"),
        monitors=[drag_lift(1, markers=(4,), interface=True, name="lift"),
                  point_value("ux", (0.6, 0.2), "disx"), point_value("uy", (0.6, 0.2), "disy")],
        adapt=AdaptParams(max_levels=4))


# ----------------------------------------------------------------------
# manufactured solutions
def _stokes_exact():
    pi = sympy.pi
    v = (sympy.sin(pi * _X) * sympy.cos(pi * _Y), -sympy.cos(pi * _X) * sympy.sin(pi * _Y))
    p = sympy.sin(pi * _X) * sympy.sin(pi * _Y)
    return v, p


def _stokes_forcing(rho, nu):
    (vx, vy), p = _stokes_exact()
    G = sympy.Matrix([[sympy.diff(vx, _X), sympy.diff(vx, _Y)],
                      [sympy.diff(vy, _X), sympy.diff(vy, _Y)]])
    sig = -p * sympy.eye(2) + rho * nu * (G + G.T)
    div = [sympy.diff(sig[i, 0], _X) + sympy.diff(sig[i, 1], _Y) for i in range(2)]
    return tuple(sympy.simplify(-d / rho) for d in div)


def _elastic_exact(amp=1e-2):
    return (amp * (_X * _X + 0.5 * _X * _Y), amp * (_Y * _Y - _X * _Y + 0.3 * _X))


def _elastic_forcing(lam, mu, rho, amp=1e-2):
    ux, uy = _elastic_exact(amp)
    H = sympy.Matrix([[sympy.diff(ux, _X), sympy.diff(ux, _Y)],
                      [sympy.diff(uy, _X), sympy.diff(uy, _Y)]])
    F = sympy.eye(2) + H
    E = (F.T * F - sympy.eye(2)) / 2
    Pk = F * (lam * E.trace() * sympy.eye(2) + 2 * mu * E)
    div = [sympy.diff(Pk[i, 0], _X) + sympy.diff(Pk[i, 1], _Y) for i in range(2)]
    return tuple(sympy.expand(-d / rho) for d in div)


def _verify_stokes():
    rho, nu = 1.0, 1.0
    (vx, vy), _ = _stokes_exact()
    fx, fy = _stokes_forcing(rho, nu)
    vel = (str(vx), str(vy))
    return CaseConfig(
        name="verify_stokes", geometry="builtin:unit_fluid", refinements=0,
        description="manufactured Stokes flow, mesh motion frozen",
        materials=dict(rho_f=rho, nu_f=nu, rho_s=1.0, nu_s=0.3, mu_s=1.0, convection=0.0),
        boundary=BoundaryTable(velocity={m: vel for m in (1, 2, 3, 4)},
                               displacement={m: _ZERO for m in (1, 2, 3, 4)},
                               pressure_pin=(0.0, 0.0)),
        goals=[point_value("vx", (0.3, 0.7), "vx")], omega=[1.0],
        forcing={"f_f": (str(fx), str(fy))},
        adapt=AdaptParams(max_levels=4, mode="uniform", estimate=False))


def _verify_elasticity():
    rho, mu, nu = 1.0, 1.0, 0.3
    lam = 2 * mu * nu / (1 - 2 * nu)
    ux, uy = _elastic_exact()
    fx, fy = _elastic_forcing(sympy.nsimplify(lam), mu, rho)
    disp = (str(ux), str(uy))
    return CaseConfig(
        name="verify_elasticity", geometry="builtin:unit_solid", refinements=0,
        description="manufactured quadratic displacement, St. Venant-Kirchhoff solid",
        materials=dict(rho_f=1.0, nu_f=1.0, rho_s=rho, nu_s=nu, mu_s=mu),
        boundary=BoundaryTable(velocity={m: _ZERO for m in (1, 2, 3, 4)},
                               displacement={m: disp for m in (1, 2, 3, 4)}),
        goals=[point_value("ux", (0.3, 0.7), "ux")], omega=[1.0],
        forcing={"f_s": (str(fx), str(fy))},
        adapt=AdaptParams(max_levels=2, mode="uniform", estimate=False))


BUILTIN = {
    "ex1": _ex1,
    "ex2": _ex2,
    "ex3": _ex3,
    "verify_stokes": _verify_stokes,
    "verify_elasticity": _verify_elasticity,
}


def builtin_case(case_id):
    try:
        return BUILTIN[case_id]()
    except KeyError:
        raise KeyError(f"unknown case {case_id!r}; choose from {sorted(BUILTIN)}") from None


def verify_case_oracle(case_id):
    """Exact fields ``{name: callable}`` and forcing ``{key: (fx, fy)}`` of a verification case."""
    if case_id == "verify_stokes":
        (vx, vy), p = _stokes_exact()
        exact = {"vx": vx, "vy": vy, "p": p, "ux": sympy.Integer(0), "uy": sympy.Integer(0)}
    elif case_id == "verify_elasticity":
        ux, uy = _elastic_exact()
        exact = {"vx": sympy.Integer(0), "vy": sympy.Integer(0), "ux": ux, "uy": uy}
    else:
        raise KeyError(f"{case_id!r} is not a verification case")
    case = builtin_case(case_id)
    fields = {k: _field(e) for k, e in exact.items()}
    grads = {k: (_field(sympy.diff(e, _X)), _field(sympy.diff(e, _Y))) for k, e in exact.items()}
    forcing = {k: tuple(expression(t) for t in v) for k, v in case.forcing.items()}
    return {"values": fields, "gradients": grads}, forcing


def _field(e):
    f = sympy.lambdify((_X, _Y), e, "numpy")
    return lambda x, y: np.broadcast_to(np.asarray(f(x, y), dtype=float), np.shape(x))


def solution_errors(problem, x_full, exact, fields=("vx", "vy")):
    """L2 norm and H1 seminorm of ``fields`` against the exact solution."""
    comps = [COMPONENTS[f] for f in fields]
    vals, grads = exact["values"], exact["gradients"]
    integ = Integrator(problem.space, npts=6)

    def l2(S, ctx):
        x, y = ctx.x[:, 0], ctx.x[:, 1]
        return sum((S[:, c, 0] - vals[f](x, y)) ** 2 for f, c in zip(fields, comps))

    def h1(S, ctx):
        x, y = ctx.x[:, 0], ctx.x[:, 1]
        return sum((S[:, c, 1] - grads[f][0](x, y)) ** 2 + (S[:, c, 2] - grads[f][1](x, y)) ** 2
                   for f, c in zip(fields, comps))

    return math.sqrt(integ.functional(x_full, l2)), math.sqrt(integ.functional(x_full, h1))


def convergence_study(case_id="verify_stokes", levels=4, fields=None):
    """Errors and observed orders over uniformly refined meshes.

    Returns a dict with ``h``, ``l2``, ``h1`` lists and the least-squares
    orders ``l2_order`` and ``h1_order``.
    """
    case = builtin_case(case_id)
    exact, _ = verify_case_oracle(case_id)
    fields = fields or (("vx", "vy") if case_id == "verify_stokes" else ("ux", "uy"))
    mesh = case.build_mesh()
    out = {"h": [], "l2": [], "h1": [], "dofs": []}
    for _ in range(levels):
        prob = case.problem(mesh)
        x, _ = prob.solve()
        e0, e1 = solution_errors(prob, x, exact, fields)
        out["h"].append(float(np.sqrt(np.min(mesh.cell_area()))))
        out["l2"].append(e0)
        out["h1"].append(e1)
        out["dofs"].append(prob.space.n_unknowns)
        mesh = mesh.uniform_refine()
    lh = np.log(out["h"])
    for key in ("l2", "h1"):
        err = np.asarray(out[key])
        out[f"{key}_order"] = float(np.polyfit(lh, np.log(err), 1)[0]) if np.all(err > 0) else None
    return out


# ----------------------------------------------------------------------
# text format
def _goal_section(g: GoalSpec):
    d = {"kind": g.kind, "name": g.name}
    if g.kind == "point":
        d["field"] = FIELD_NAMES[g.component]
        d["point"] = " ".join(repr(float(t)) for t in g.point)
    elif g.kind == "force":
        d["component"] = str(g.component)
        d["markers"] = " ".join(str(m) for m in g.markers)
        d["interface"] = str(bool(g.interface)).lower()
    else:
        d["markers"] = " ".join(str(m) for m in g.markers)
    return d


def _goal_from(sec):
    kind = sec["kind"]
    markers = tuple(int(t) for t in sec.get("markers", "").split())
    if kind == "point":
        return point_value(sec["field"], tuple(float(t) for t in sec["point"].split()), sec["name"])
    if kind == "force":
        return drag_lift(int(sec["component"]), markers, sec.getboolean("interface"), sec["name"])
    if kind == "flux":
        return GoalSpec("flux", sec["name"], markers=markers)
    raise ValueError(f"unknown goal kind {kind!r}")


def case_to_text(case: CaseConfig):
    """Serialize a case to the INI-style config format."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["case"] = {
        "name": case.name, "description": case.description, "geometry": case.geometry,
        "refinements": str(case.refinements), "solid_pressure": case.solid_pressure,
        "pressure_pin": ("none" if case.boundary.pressure_pin is None
                         else " ".join(repr(float(t)) for t in case.boundary.pressure_pin)),
    }
    cp["materials"] = {k: repr(v) for k, v in case.materials.items()}
    for key, pair in case.forcing.items():
        cp["materials"][key] = " ; ".join(pair)
    for m in sorted(case.boundary.markers()):
        sec = {}
        if m in case.boundary.velocity:
            sec["velocity"] = " ; ".join(case.boundary.velocity[m])
        if m in case.boundary.displacement:
            sec["displacement"] = " ; ".join(case.boundary.displacement[m])
        if m in case.boundary.pressure:
            sec["pressure"] = repr(float(case.boundary.pressure[m]))
        cp[f"boundary.{m}"] = sec
    for i, (g, w) in enumerate(zip(case.goals, case.omega), 1):
        cp[f"goal.{i}"] = dict(_goal_section(g), omega=repr(w))
    for i, g in enumerate(case.monitors, 1):
        cp[f"monitor.{i}"] = _goal_section(g)
    if case.references or case.jc_reference:
        sec = {}
        for name, (val, src) in case.references.items():
            sec[name] = repr(float(val))
            sec[f"{name}.source"] = src
        if case.jc_reference is not None:
            sec["j_c"] = repr(float(case.jc_reference[0]))
            sec["j_c.source"] = case.jc_reference[1]
        cp["references"] = sec
    cp["adapt"] = {k: repr(v) if isinstance(v, float) else str(v)
                   for k, v in dataclasses.asdict(case.adapt).items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _numbered(cp, prefix):
    secs = [s for s in cp.sections() if s.startswith(prefix + ".")]
    return sorted(secs, key=lambda s: int(s.split(".", 1)[1]))


def case_from_text(text):
    """Parse the config format produced by :func:`case_to_text`."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    c = cp["case"]
    pin = c.get("pressure_pin", "none")
    materials, forcing = {}, {}
    for k, v in cp["materials"].items():
        if k in ("f_f", "f_s"):
            forcing[k] = tuple(t.strip() for t in v.split(";"))
        else:
            materials[k] = float(v)
    bt = BoundaryTable(pressure_pin=None if pin.lower() == "none"
                       else tuple(float(t) for t in pin.split()))
    for s in _numbered(cp, "boundary"):
        m = int(s.split(".", 1)[1])
        sec = cp[s]
        if "velocity" in sec:
            bt.velocity[m] = tuple(t.strip() for t in sec["velocity"].split(";"))
        if "displacement" in sec:
            bt.displacement[m] = tuple(t.strip() for t in sec["displacement"].split(";"))
        if "pressure" in sec:
            bt.pressure[m] = float(sec["pressure"])
    goals, omega = [], []
    for s in _numbered(cp, "goal"):
        goals.append(_goal_from(cp[s]))
        omega.append(float(cp[s].get("omega", "1.0")))
    monitors = [_goal_from(cp[s]) for s in _numbered(cp, "monitor")]
    refs, jc = {}, None
    if cp.has_section("references"):
        r = cp["references"]
        for k, v in r.items():
            if k.endswith(".source"):
                continue
            if k == "j_c":
                jc = (float(v), r.get("j_c.source", ""))
            else:
                refs[k] = (float(v), r.get(f"{k}.source", ""))
    ap = {}
    if cp.has_section("adapt"):
        types = {f.name: f.type for f in dataclasses.fields(AdaptParams)}
        for k, v in cp["adapt"].items():
            if k not in types:
                raise ValueError(f"unknown adapt option {k!r}")
            t = types[k]
            ap[k] = (v.lower() == "true" if t in ("bool", bool) else
                     int(v) if t in ("int", int) else float(v) if t in ("float", float) else v)
    return CaseConfig(
        name=c["name"], geometry=c["geometry"], materials=materials, boundary=bt,
        goals=goals, omega=omega, references=refs, jc_reference=jc, monitors=monitors,
        adapt=AdaptParams(**ap), refinements=int(c.get("refinements", "0")),
        solid_pressure=c.get("solid_pressure", "constrain"), description=c.get("description", ""),
        forcing=forcing)


def load_case(spec):
    """Builtin case id or path to a config file."""
    if spec in BUILTIN:
        return builtin_case(spec)
    return case_from_text(Path(spec).read_text())


__all__ = ["BUILTIN", "BoundaryTable", "CaseConfig", "builtin_case", "case_from_text",
           "case_to_text", "convergence_study", "ex1_mesh", "ex2_mesh", "expression",
           "fsi1_mesh", "load_case", "load_geometry", "solution_errors", "unit_square",
           "verify_case_oracle"]
