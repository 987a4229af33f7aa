"""Continuous tensor-product Lagrange spaces on hierarchical quad meshes.

A :class:`FESpace` is a mixed space made of scalar components, each using a
:class:`DofHandler` of some degree.  Global vectors are component-blocked:
all DoFs of component 0 first, then component 1, and so on.  The "full"
vector holds a value for every nodal DoF, including hanging and Dirichlet
ones; :class:`AffineMap` maps the free unknowns to it.
"""

from __future__ import annotations

import dataclasses
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import MeshError, QuadMesh

# reference quadrants of the four children, as (xi offset, eta offset)
CHILD_OFFSETS = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])


# ----------------------------------------------------------------------
# quadrature
@lru_cache(maxsize=None)
def gauss_1d(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def gauss_tensor(n):
    """Tensor Gauss rule with ``n`` points per direction on ``[-1, 1]^2``."""
    x, w = gauss_1d(n)
    X, Y = np.meshgrid(x, x)
    W = np.outer(w, w)
    return np.column_stack([X.ravel(), Y.ravel()]), W.ravel()


def quadrature(degree):
    """Tensor Gauss rule exact for polynomials of ``degree`` in each variable.

    Returns ``(points, weights)`` with weights summing to 4.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    return gauss_tensor((degree + 2) // 2)


# ----------------------------------------------------------------------
# Lagrange basis
@lru_cache(maxsize=None)
def nodes_1d(k):
    return np.linspace(-1.0, 1.0, k + 1)


def lagrange_1d(k, t):
    """Values and derivatives of the degree-``k`` equispaced basis at ``t``.

    Returns arrays of shape ``(len(t), k + 1)``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    xs = nodes_1d(k)
    n = k + 1
    val = np.ones((t.size, n))
    der = np.zeros((t.size, n))
    for i in range(n):
        others = [j for j in range(n) if j != i]
        denom = np.prod([xs[i] - xs[j] for j in others])
        factors = np.stack([t - xs[j] for j in others], axis=1) if others else np.ones((t.size, 0))
        val[:, i] = np.prod(factors, axis=1) / denom
        d = np.zeros(t.size)
        for m in range(len(others)):
            d += np.prod(np.delete(factors, m, axis=1), axis=1)
        der[:, i] = d / denom
    return val, der


def lagrange_2d(k, pts):
    """Tensor basis values ``(npts, nloc)`` and reference gradients ``(npts, nloc, 2)``.

    Local node ``j * (k + 1) + i`` sits at ``(nodes[i], nodes[j])``.
    """
    pts = np.atleast_2d(pts)
    vx, dx = lagrange_1d(k, pts[:, 0])
    vy, dy = lagrange_1d(k, pts[:, 1])
    val = (vy[:, :, None] * vx[:, None, :]).reshape(len(pts), -1)
    gx = (vy[:, :, None] * dx[:, None, :]).reshape(len(pts), -1)
    gy = (dy[:, :, None] * vx[:, None, :]).reshape(len(pts), -1)
    return val, np.stack([gx, gy], axis=-1)


@lru_cache(maxsize=None)
def reference_nodes(k):
    t = nodes_1d(k)
    X, Y = np.meshgrid(t, t)
    return np.column_stack([X.ravel(), Y.ravel()])


def bilinear_shape(pts):
    pts = np.atleast_2d(pts)
    sx = np.array([-1.0, 1.0, 1.0, -1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0])
    val = 0.25 * (1 + pts[:, :1] * sx) * (1 + pts[:, 1:2] * sy)
    dx = 0.25 * sx * (1 + pts[:, 1:2] * sy)
    dy = 0.25 * sy * (1 + pts[:, :1] * sx)
    return val, np.stack([dx, dy], axis=-1)


def map_points(corners, pts):
    """Physical coordinates of reference ``pts`` in cells with ``corners`` (nc, 4, 2)."""
    val, _ = bilinear_shape(pts)
    return np.einsum("qv,cvd->cqd", val, corners)


def geometry(corners, pts):
    """Jacobians ``(nc, nq, 2, 2)`` (d x / d xi) and determinants of the bilinear map."""
    _, dval = bilinear_shape(pts)
    jac = np.einsum("qvj,cvi->cqij", dval, corners)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    return jac, det


def inverse_2x2(a):
    det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    inv = np.empty_like(a)
    inv[..., 0, 0] = a[..., 1, 1]
    inv[..., 1, 1] = a[..., 0, 0]
    inv[..., 0, 1] = -a[..., 0, 1]
    inv[..., 1, 0] = -a[..., 1, 0]
    return inv / det[..., None, None], det


# ----------------------------------------------------------------------
# scalar DoF handler
class DofHandler:
    """Scalar continuous Q_k DoFs with hanging-node constraints.

    DoFs are numbered vertices first (by vertex id), then edge interiors
    (by edge id, along the edge direction), then cell interiors.
    """

    def __init__(self, mesh: QuadMesh, k: int):
        self.mesh = mesh
        self.k = k
        act = mesh.active
        cv = mesh.cell_vertices[act]
        ce = mesh.cell_edges[act]
        verts = np.unique(cv)
        edges = np.unique(ce)
        nv = len(verts)
        vmap = -np.ones(len(mesh.vertices), dtype=np.int64)
        vmap[verts] = np.arange(nv)
        ne_int = k - 1
        emap = -np.ones(len(mesh.edge_vertices), dtype=np.int64)
        emap[edges] = nv + ne_int * np.arange(len(edges))
        n_edge = ne_int * len(edges)
        n_int = (k - 1) ** 2
        self.n_dofs = nv + n_edge + n_int * len(act)
        self.vertex_dof = vmap
        self.edge_dof_start = emap

        n1 = k + 1
        cell_dofs = np.empty((len(act), n1 * n1), dtype=np.int64)
        ii, jj = np.meshgrid(np.arange(n1), np.arange(n1))
        ii, jj = ii.ravel(), jj.ravel()
        for corner, (ci, cj) in enumerate([(0, 0), (k, 0), (k, k), (0, k)]):
            cell_dofs[:, cj * n1 + ci] = vmap[cv[:, corner]]
        if k > 1:
            ev = mesh.edge_vertices
            from .mesh import FACE_VERTICES
            for f, (a, _) in enumerate(FACE_VERTICES):
                if f == 0:
                    loc = [(s, 0) for s in range(1, k)]
                elif f == 1:
                    loc = [(k, s) for s in range(1, k)]
                elif f == 2:
                    loc = [(s, k) for s in range(1, k)]
                else:
                    loc = [(0, s) for s in range(1, k)]
                e = ce[:, f]
                forward = ev[e, 0] == cv[:, a]
                for s, (ci, cj) in enumerate(loc, start=1):
                    pos = np.where(forward, s - 1, k - 1 - s)
                    cell_dofs[:, cj * n1 + ci] = emap[e] + pos
            interior = np.flatnonzero((ii > 0) & (ii < k) & (jj > 0) & (jj < k))
            start = nv + n_edge
            cell_dofs[:, interior] = start + n_int * np.arange(len(act))[:, None] + np.arange(n_int)
        self.cell_dofs = cell_dofs
        self.constraints = self._hanging_constraints(edges)

    def _hanging_constraints(self, edges):
        mesh, k = self.mesh, self.k
        raw = {}
        for E in edges:
            ch = mesh.edge_children[E]
            if ch[0] < 0 or self.vertex_dof[mesh.edge_midpoint[E]] < 0:
                continue
            a, b = mesh.edge_vertices[E]
            masters = [self.vertex_dof[a]]
            masters += [self.edge_dof_start[E] + s for s in range(k - 1)]
            masters.append(self.vertex_dof[b])
            slaves, ts = [self.vertex_dof[mesh.edge_midpoint[E]]], [0.0]
            for half, shift in ((0, -1.0), (1, 0.0)):
                for s in range(1, k):
                    slaves.append(self.edge_dof_start[ch[half]] + s - 1)
                    ts.append(shift + s / k)
            vals, _ = lagrange_1d(k, np.array(ts))
            # edge-parameter basis: vertex a, interior nodes, vertex b
            order = [0] + list(range(1, k)) + [k]
            for s_dof, row in zip(slaves, vals):
                raw[int(s_dof)] = [(int(masters[i]), float(row[order[i]]))
                                   for i in range(k + 1) if abs(row[order[i]]) > 1e-14]
        return _resolve_constraints(raw)

    def node_points(self):
        """Physical coordinate of every DoF."""
        mesh = self.mesh
        corners = mesh.vertices[mesh.cell_vertices[mesh.active]]
        x = map_points(corners, reference_nodes(self.k))
        pts = np.empty((self.n_dofs, 2))
        pts[self.cell_dofs.ravel()] = x.reshape(-1, 2)
        return pts

    def constraint_matrix(self):
        """Sparse ``C`` with ``x_full = C x_full`` for constraint-consistent vectors."""
        if getattr(self, "_cmat", None) is not None:
            return self._cmat
        n = self.n_dofs
        rows, cols, vals = [], [], []
        slave = np.zeros(n, dtype=bool)
        for s, lst in self.constraints.items():
            slave[s] = True
            for m, c in lst:
                rows.append(s)
                cols.append(m)
                vals.append(c)
        keep = np.flatnonzero(~slave)
        rows.extend(keep.tolist())
        cols.extend(keep.tolist())
        vals.extend([1.0] * len(keep))
        self._cmat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return self._cmat


def _resolve_constraints(raw):
    """Expand constraint chains so that masters are never slaves."""
    done = {}

    def expand(s, depth=0):
        if s in done:
            return done[s]
        if depth > 64:
            raise MeshError("cyclic hanging-node constraints")
        acc = {}
        for m, c in raw[s]:
            if m in raw:
                for mm, cc in expand(m, depth + 1):
                    acc[mm] = acc.get(mm, 0.0) + c * cc
            else:
                acc[m] = acc.get(m, 0.0) + c
        done[s] = sorted((m, c) for m, c in acc.items() if abs(c) > 1e-14)
        return done[s]

    for s in sorted(raw):
        expand(s)
    return done


# ----------------------------------------------------------------------
# mixed spaces
@dataclasses.dataclass(frozen=True)
class FieldSpec:
    name: str
    degree: int
    ncomp: int


PRIMAL_FIELDS = (FieldSpec("v", 2, 2), FieldSpec("u", 2, 2), FieldSpec("p", 1, 1))
ENRICHED_FIELDS = (FieldSpec("v", 4, 2), FieldSpec("u", 4, 2), FieldSpec("p", 2, 1))


class FESpace:
    """Mixed continuous space on the active cells of ``mesh``."""

    def __init__(self, mesh: QuadMesh, fields=PRIMAL_FIELDS):
        self.mesh = mesh
        self.fields = tuple(fields)
        self.handlers = {}
        self.comp_degree = []
        self.comp_field = []
        for f in self.fields:
            if f.degree not in self.handlers:
                self.handlers[f.degree] = DofHandler(mesh, f.degree)
            for c in range(f.ncomp):
                self.comp_degree.append(f.degree)
                self.comp_field.append(f.name)
        sizes = [self.handlers[k].n_dofs for k in self.comp_degree]
        self.comp_offset = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.n_dofs = int(self.comp_offset[-1])
        self.n_comp = len(self.comp_degree)

    def handler(self, comp):
        return self.handlers[self.comp_degree[comp]]

    def comp_slice(self, comp):
        return slice(self.comp_offset[comp], self.comp_offset[comp + 1])

    def field_components(self, name):
        return [c for c, f in enumerate(self.comp_field) if f == name]

    def cell_dofs(self, comp):
        """Global (full-vector) DoFs of component ``comp`` per active cell."""
        return self.handler(comp).cell_dofs + self.comp_offset[comp]

    @property
    def n_hanging(self):
        return sum(len(self.handler(c).constraints) for c in range(self.n_comp))

    @property
    def n_unknowns(self):
        """DoFs that carry independent values (hanging DoFs excluded)."""
        return self.n_dofs - self.n_hanging

    def constraint_list(self):
        out = {}
        for c in range(self.n_comp):
            off = self.comp_offset[c]
            for s, lst in self.handler(c).constraints.items():
                out[s + off] = [(m + off, w) for m, w in lst]
        return out

    def apply_constraints(self, x):
        """Overwrite hanging DoFs by their interpolated values (a projection)."""
        x = np.array(x, dtype=float, copy=True)
        for c in range(self.n_comp):
            sl = self.comp_slice(c)
            x[sl] = self.handler(c).constraint_matrix() @ x[sl]
        return x

    def affine_map(self, dirichlet=None):
        """Affine parametrization of constraint-consistent vectors.

        ``dirichlet`` maps full-vector DoF -> prescribed value.  Entries for
        hanging DoFs are ignored; they always follow their masters.
        """
        return AffineMap(self, dirichlet or {})

    def interpolate(self, funcs):
        """Nodal interpolant; ``funcs`` holds one callable ``f(x, y)`` per component."""
        x = np.zeros(self.n_dofs)
        for c, f in enumerate(funcs):
            if f is None:
                continue
            pts = self.handler(c).node_points()
            x[self.comp_slice(c)] = np.broadcast_to(f(pts[:, 0], pts[:, 1]), len(pts))
        return self.apply_constraints(x)

    def evaluate(self, x, point, comps=None, gradient=False):
        """Values (and optionally gradients) of the field ``x`` at ``point``."""
        cell, xi = self.mesh.find_cell(point)
        k = int(np.searchsorted(self.mesh.active, cell))
        corners = self.mesh.vertices[self.mesh.cell_vertices[cell]][None]
        jac, _ = geometry(corners, xi[None])
        jinv, _ = inverse_2x2(jac[0, 0])
        comps = range(self.n_comp) if comps is None else comps
        vals, grads = [], []
        for c in comps:
            phi, dphi = lagrange_2d(self.comp_degree[c], xi[None])
            coef = x[self.cell_dofs(c)[k]]
            vals.append(phi[0] @ coef)
            grads.append((dphi[0] @ jinv) .T @ coef)
        vals = np.array(vals)
        return (vals, np.array(grads)) if gradient else vals


def evaluate_at_point(space, x, point, comps=None):
    return space.evaluate(x, point, comps)


class AffineMap:
    """``x_full = P @ x_free + d`` for a space with hanging and Dirichlet constraints."""

    def __init__(self, space: FESpace, dirichlet):
        n = space.n_dofs
        cons = space.constraint_list()
        fixed = np.zeros(n, dtype=bool)
        d = np.zeros(n)
        for i, val in dirichlet.items():
            if i not in cons:
                fixed[i] = True
                d[i] = val
        slave = np.zeros(n, dtype=bool)
        slave[list(cons)] = True
        free = np.flatnonzero(~fixed & ~slave)
        col = -np.ones(n, dtype=np.int64)
        col[free] = np.arange(len(free))
        rows, cols, vals = list(free), list(range(len(free))), [1.0] * len(free)
        for s, lst in cons.items():
            for m, c in lst:
                if col[m] >= 0:
                    rows.append(s)
                    cols.append(col[m])
                    vals.append(c)
                else:
                    d[s] += c * d[m]
        self.space = space
        self.free = free
        self.fixed = np.flatnonzero(fixed)
        self.P = sp.csr_matrix((vals, (rows, cols)), shape=(n, len(free)))
        self.PT = self.P.T.tocsr()
        self.d = d
        self.n_free = len(free)

    def expand(self, x_free):
        return self.P @ x_free + self.d

    def expand_homogeneous(self, x_free):
        return self.P @ x_free

    def restrict(self, x_full):
        """Free part of a constraint-consistent full vector."""
        return np.asarray(x_full)[self.free]

    def reduce_vector(self, r_full):
        return self.PT @ r_full

    def reduce_matrix(self, K_full):
        return (self.PT @ K_full @ self.P).tocsc()


# ----------------------------------------------------------------------
# transfer between spaces
def _cell_transfer(space_from, x_from, space_to, cell_map_from, ref_map):
    """Evaluate ``x_from`` at the nodes of ``space_to``.

    ``cell_map_from[i]`` is the active index (in ``space_from``) of the cell
    that contains target cell ``i``; ``ref_map(i)`` returns (scale, offset)
    mapping target reference coordinates into that cell.
    """
    x_to = np.zeros(space_to.n_dofs)
    ncells = space_to.mesh.n_active
    scale, offset = ref_map
    for c in range(space_to.n_comp):
        kf, kt = space_from.comp_degree[c], space_to.comp_degree[c]
        tnodes = reference_nodes(kt)
        src = space_from.cell_dofs(c)[cell_map_from]
        dst = space_to.cell_dofs(c)
        # group target cells by (scale, offset) so each group shares one basis table
        keys = np.column_stack([scale, offset])
        uniq, inv = np.unique(np.round(keys, 14), axis=0, return_inverse=True)
        inv = inv.ravel()
        vals = np.empty((ncells, len(tnodes)))
        for g, key in enumerate(uniq):
            sel = np.flatnonzero(inv == g)
            pts = key[1:] + key[0] * tnodes
            phi, _ = lagrange_2d(kf, pts)
            vals[sel] = x_from[src[sel]] @ phi.T
        x_to[dst.ravel()] = vals.ravel()
    return space_to.apply_constraints(x_to)


def transfer(space_from, x_from, space_to):
    """Nodal interpolation of ``x_from`` into ``space_to`` (same mesh).

    Realizes injection Q2 -> Q4 as well as the interpolation Q4 -> Q2.
    """
    if space_from.mesh is not space_to.mesh:
        raise MeshError("spaces live on different meshes")
    n = space_to.mesh.n_active
    ident = (np.ones(n), np.zeros((n, 2)))
    return _cell_transfer(space_from, x_from, space_to, np.arange(n), ident)


def interpolate_down(space_high, space_low, x_high):
    return transfer(space_high, x_high, space_low)


def inject(space_low, space_high, x_low):
    return transfer(space_low, x_low, space_high)


def _ancestor_maps(mesh_fine, is_target):
    """For each active fine cell: ancestor passing ``is_target`` and the reference map."""
    parent = mesh_fine.cell_parent
    children = mesh_fine.cell_children
    act = mesh_fine.active
    anc = np.empty(len(act), dtype=np.int64)
    scale = np.ones(len(act))
    offset = np.zeros((len(act), 2))
    for i, c in enumerate(act):
        s, o = 1.0, np.zeros(2)
        cur = int(c)
        while not is_target(cur):
            par = int(parent[cur])
            if par < 0:
                raise MeshError("fine mesh does not refine the coarse mesh")
            q = int(np.flatnonzero(children[par] == cur)[0])
            o = CHILD_OFFSETS[q] + 0.5 * o
            s *= 0.5
            cur = par
        anc[i] = cur
        scale[i] = s
        offset[i] = o
    return anc, scale, offset


def prolongate(space_coarse, x_coarse, space_fine):
    """Transfer a field from a coarser mesh of the same tree to a refined one."""
    mc = space_coarse.mesh
    pos = -np.ones(mc.n_cells, dtype=np.int64)
    pos[mc.active] = np.arange(mc.n_active)
    if len(space_fine.mesh.cell_parent) < mc.n_cells:
        raise MeshError("meshes are not nested")
    anc, scale, offset = _ancestor_maps(space_fine.mesh, lambda c: c < mc.n_cells and pos[c] >= 0)
    return _cell_transfer(space_coarse, x_coarse, space_fine, pos[anc], (scale, offset))


def patch_interpolation(space_low, x_low, space_high):
    """Higher-order patch interpolant of a Q2/Q1 field, expressed in ``space_high``.

    On every complete patch (the four active children of one parent) the
    low-order nodal values on the parent's finer grid define a polynomial of
    twice the degree; it is sampled at the target nodes.  Cells without a
    complete patch fall back to plain injection.
    """
    mesh = space_low.mesh
    act = mesh.active
    pos = -np.ones(mesh.n_cells, dtype=np.int64)
    pos[act] = np.arange(len(act))
    x_high = inject(space_low, space_high, x_low)
    parents = np.unique(mesh.cell_parent[act])
    parents = parents[parents >= 0]
    complete = [p for p in parents if np.all(pos[mesh.cell_children[p]] >= 0)]
    for c in range(space_low.n_comp):
        kl, kh = space_low.comp_degree[c], space_high.comp_degree[c]
        kp = 2 * kl
        ldofs = space_low.cell_dofs(c)
        hdofs = space_high.cell_dofs(c)
        pnodes = reference_nodes(kp)
        # which child / local low node supplies each patch node
        src_child = np.empty(len(pnodes), dtype=np.int64)
        src_local = np.empty(len(pnodes), dtype=np.int64)
        lnodes = reference_nodes(kl)
        for n, pt in enumerate(pnodes):
            for q in range(4):
                loc = 2.0 * pt - 2.0 * CHILD_OFFSETS[q]
                if np.all(np.abs(loc) <= 1 + 1e-12):
                    src_child[n] = q
                    src_local[n] = int(np.argmin(np.linalg.norm(lnodes - loc, axis=1)))
                    break
        hnodes = reference_nodes(kh)
        tables = [lagrange_2d(kp, CHILD_OFFSETS[q] + 0.5 * hnodes)[0] for q in range(4)]
        for p in complete:
            kids = pos[mesh.cell_children[p]]
            coef = x_low[ldofs[kids[src_child], src_local]]
            for q in range(4):
                x_high[hdofs[kids[q]]] = tables[q] @ coef
    return space_high.apply_constraints(x_high)
