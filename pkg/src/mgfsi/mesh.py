"""Hierarchical quadrilateral meshes with 1-irregular adaptive refinement.

Cells are stored in an append-only quadtree forest.  Refinement never
renumbers existing vertices, edges or cells, so cell ids stay valid across
refinement levels and can be used to transfer solutions between meshes.

Local conventions (reference square ``[-1, 1]^2``)::

    v3 ---- f2 ---- v2
    |                |
    f3              f1
    |                |
    v0 ---- f0 ---- v1

Vertices are counterclockwise, face ``f`` runs along increasing reference
coordinate: ``f0: v0->v1``, ``f1: v1->v2``, ``f2: v3->v2``, ``f3: v0->v3``.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

FLUID = 0
SOLID = 1

FACE_VERTICES = ((0, 1), (1, 2), (3, 2), (0, 3))


@dataclasses.dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def project(self, point):
        c = np.asarray(self.center, dtype=float)
        d = np.asarray(point, dtype=float) - c
        return c + self.radius * d / np.linalg.norm(d)


class MeshError(ValueError):
    pass


class QuadMesh:
    """Quadtree forest of quadrilaterals.

    Attributes
    ----------
    vertices : (nv, 2) float array
    cell_vertices : (nc, 4) int array, counterclockwise
    cell_edges : (nc, 4) int array, edge id of each local face
    cell_level, cell_parent, cell_material : (nc,) int arrays
    cell_children : (nc, 4) int array, ``-1`` for leaves
    edge_vertices : (ne, 2) int array
    edge_children : (ne, 2) int array, child 0 touches ``edge_vertices[e, 0]``
    edge_parent, edge_midpoint, edge_marker : (ne,) int arrays
    curved : dict mapping boundary marker -> :class:`Circle`
    """

    def __init__(self, vertices, cell_vertices, cell_edges, cell_level,
                 cell_parent, cell_children, cell_material, edge_vertices,
                 edge_children, edge_parent, edge_midpoint, edge_marker,
                 curved=None):
        self.vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        self.cell_vertices = np.asarray(cell_vertices, dtype=np.int64).reshape(-1, 4)
        self.cell_edges = np.asarray(cell_edges, dtype=np.int64).reshape(-1, 4)
        self.cell_level = np.asarray(cell_level, dtype=np.int64)
        self.cell_parent = np.asarray(cell_parent, dtype=np.int64)
        self.cell_children = np.asarray(cell_children, dtype=np.int64).reshape(-1, 4)
        self.cell_material = np.asarray(cell_material, dtype=np.int64)
        self.edge_vertices = np.asarray(edge_vertices, dtype=np.int64).reshape(-1, 2)
        self.edge_children = np.asarray(edge_children, dtype=np.int64).reshape(-1, 2)
        self.edge_parent = np.asarray(edge_parent, dtype=np.int64)
        self.edge_midpoint = np.asarray(edge_midpoint, dtype=np.int64)
        self.edge_marker = np.asarray(edge_marker, dtype=np.int64)
        self.curved = dict(curved or {})
        for arr in vars(self).values():
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)
        self.active = np.flatnonzero(self.cell_children[:, 0] < 0)

    # ------------------------------------------------------------------
    # construction
    @classmethod
    def from_arrays(cls, vertices, cells, materials, face_markers=(), curved=None):
        """Build a level-0 mesh from vertex/cell lists.

        ``face_markers`` is an iterable of ``(va, vb, marker)``.  Exterior
        faces without an explicit marker get marker 0 (which is invalid for
        boundary conditions but keeps the mesh usable).
        """
        vertices = np.asarray(vertices, dtype=float)
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 4)
        edge_index = {}
        edge_vertices = []
        cell_edges = np.zeros_like(cells)
        for c, verts in enumerate(cells):
            for f, (a, b) in enumerate(FACE_VERTICES):
                va, vb = int(verts[a]), int(verts[b])
                key = (min(va, vb), max(va, vb))
                if key not in edge_index:
                    edge_index[key] = len(edge_vertices)
                    edge_vertices.append((va, vb))
                cell_edges[c, f] = edge_index[key]
        ne = len(edge_vertices)
        markers = np.zeros(ne, dtype=np.int64)
        for va, vb, m in face_markers:
            key = (min(va, vb), max(va, vb))
            if key not in edge_index:
                raise MeshError(f"face marker on unknown face ({va}, {vb})")
            markers[edge_index[key]] = m
        nc = len(cells)
        mesh = cls(vertices, cells, cell_edges, np.zeros(nc), -np.ones(nc),
                   -np.ones((nc, 4)), materials, edge_vertices,
                   -np.ones((ne, 2)), -np.ones(ne), -np.ones(ne), markers, curved)
        mesh.check()
        return mesh

    @classmethod
    def rectangle(cls, x0, x1, y0, y1, nx, ny, material=FLUID, markers=None):
        """Structured ``nx`` by ``ny`` grid; markers = (bottom, right, top, left)."""
        xs = np.linspace(x0, x1, nx + 1)
        ys = np.linspace(y0, y1, ny + 1)
        return cls.tensor_grid(xs, ys, material, markers)

    @classmethod
    def tensor_grid(cls, xs, ys, material=FLUID, markers=None):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        nx, ny = len(xs) - 1, len(ys) - 1
        X, Y = np.meshgrid(xs, ys)
        vertices = np.column_stack([X.ravel(), Y.ravel()])
        vid = lambda i, j: j * (nx + 1) + i  # noqa: E731
        cells, mats = [], []
        for j in range(ny):
            for i in range(nx):
                cells.append((vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)))
                xc, yc = 0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])
                mats.append(material(xc, yc) if callable(material) else material)
        bottom, right, top, left = markers or (1, 2, 3, 4)
        faces = []
        for i in range(nx):
            faces.append((vid(i, 0), vid(i + 1, 0), bottom))
            faces.append((vid(i, ny), vid(i + 1, ny), top))
        for j in range(ny):
            faces.append((vid(nx, j), vid(nx, j + 1), right))
            faces.append((vid(0, j), vid(0, j + 1), left))
        return cls.from_arrays(vertices, cells, mats, faces)

    # ------------------------------------------------------------------
    # queries
    @property
    def n_active(self):
        return len(self.active)

    @property
    def n_cells(self):
        return len(self.cell_level)

    def cell_area(self, cells=None):
        cells = self.active if cells is None else np.asarray(cells)
        p = self.vertices[self.cell_vertices[cells]]
        x, y = p[..., 0], p[..., 1]
        return 0.5 * np.abs(
            (x[:, 0] * y[:, 1] - x[:, 1] * y[:, 0])
            + (x[:, 1] * y[:, 2] - x[:, 2] * y[:, 1])
            + (x[:, 2] * y[:, 3] - x[:, 3] * y[:, 2])
            + (x[:, 3] * y[:, 0] - x[:, 0] * y[:, 3]))

    def min_jacobian(self, cells=None):
        """Smallest corner Jacobian determinant of each cell."""
        cells = self.active if cells is None else np.asarray(cells)
        p = self.vertices[self.cell_vertices[cells]]
        dets = []
        for k in range(4):
            a, b, c = p[:, k], p[:, (k + 1) % 4], p[:, (k + 3) % 4]
            e1, e2 = b - a, c - a
            dets.append(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        return np.min(dets, axis=0)

    def edge_users(self):
        """Map edge id -> list of active cells having that edge as a face."""
        users = {}
        for c in self.active:
            for e in self.cell_edges[c]:
                users.setdefault(int(e), []).append(int(c))
        return users

    def face_neighbors(self, cell, face, users=None):
        """Active cells across ``face`` of active ``cell`` (empty on boundary)."""
        users = self.edge_users() if users is None else users
        e = int(self.cell_edges[cell, face])
        others = [c for c in users.get(e, []) if c != cell]
        if others:
            return others
        pe = int(self.edge_parent[e])
        if pe >= 0 and users.get(pe):
            return list(users[pe])
        if self.edge_children[e, 0] >= 0:
            out = []
            for ce in self.edge_children[e]:
                out.extend(users.get(int(ce), []))
            return out
        return []

    def hanging_vertices(self):
        """Map hanging vertex id -> edge id of the coarse face it sits on."""
        users = self.edge_users()
        out = {}
        for e, cells in users.items():
            if self.edge_children[e, 0] >= 0:
                out[int(self.edge_midpoint[e])] = e
        return out

    def boundary_faces(self, marker=None):
        """List of (cell, local face, marker) for active exterior faces."""
        out = []
        for c in self.active:
            for f in range(4):
                m = int(self.edge_marker[self.cell_edges[c, f]])
                if m > 0 and (marker is None or m == marker):
                    out.append((int(c), f, m))
        return out

    def interface_faces(self):
        """(fluid cell, local face) pairs whose neighbor across is solid."""
        users = self.edge_users()
        out = []
        for c in self.active:
            if self.cell_material[c] != FLUID:
                continue
            for f in range(4):
                nbrs = self.face_neighbors(c, f, users)
                if nbrs and self.cell_material[nbrs[0]] == SOLID:
                    out.append((int(c), f))
        return out

    def is_one_irregular(self):
        for c in self.active:
            for e in self.cell_edges[c]:
                ch = self.edge_children[e]
                if ch[0] >= 0 and (self.edge_children[ch[0], 0] >= 0
                                   or self.edge_children[ch[1], 0] >= 0):
                    return False
        return True

    def find_cell(self, x, tol=1e-10):
        """Active cell containing point ``x`` and its reference coordinates."""
        x = np.asarray(x, dtype=float)
        p = self.vertices[self.cell_vertices[self.active]]
        lo, hi = p.min(axis=1) - tol, p.max(axis=1) + tol
        cand = np.flatnonzero(np.all((x >= lo) & (x <= hi), axis=1))
        for k in cand:
            xi, ok = reference_coordinates(p[k], x)
            if ok and np.all(np.abs(xi) <= 1.0 + 1e-9):
                return int(self.active[k]), np.clip(xi, -1.0, 1.0)
        raise MeshError(f"point {tuple(x)} is outside the mesh")

    def check(self):
        if np.any(self.min_jacobian() <= 0):
            bad = self.active[self.min_jacobian() <= 0]
            raise MeshError(f"inverted or degenerate cells: {bad[:10].tolist()}")

    # ------------------------------------------------------------------
    # refinement
    def uniform_refine(self):
        return self.refine_marked(self.active, closure=False)

    def refine_marked(self, marked, closure=True, siblings=True):
        """Refine ``marked`` active cells and return the new mesh.

        With ``closure`` the marking is extended until the result is
        1-irregular.  With ``siblings`` all active siblings of a marked cell
        are marked too, so every active cell keeps a complete patch of four
        siblings (needed by patch-wise higher-order interpolation).
        """
        flags = np.zeros(self.n_cells, dtype=bool)
        marked = np.asarray(list(marked), dtype=np.int64)
        if marked.size and np.any(self.cell_children[marked, 0] >= 0):
            raise MeshError("can only refine active cells")
        flags[marked] = True
        if closure or siblings:
            self._close_flags(flags, closure, siblings)
        b = _Builder(self)
        for c in np.flatnonzero(flags):
            b.refine_cell(int(c))
        mesh = b.finish()
        mesh.check()
        return mesh

    def _close_flags(self, flags, closure, siblings):
        users = self.edge_users()
        changed = True
        while changed:
            changed = False
            if siblings:
                for c in np.flatnonzero(flags):
                    par = self.cell_parent[c]
                    if par >= 0:
                        for s in self.cell_children[par]:
                            if self.cell_children[s, 0] < 0 and not flags[s]:
                                flags[s] = True
                                changed = True
            if closure:
                for c in np.flatnonzero(flags):
                    for e in self.cell_edges[c]:
                        pe = self.edge_parent[e]
                        if pe < 0:
                            continue
                        for k in users.get(int(pe), []):
                            if not flags[k]:
                                flags[k] = True
                                changed = True

    # ------------------------------------------------------------------
    # plain-text I/O of the active mesh as a flat level-0 mesh
    def to_text(self):
        """Serialize the active cells as a flat mesh (see ``read_mesh``)."""
        if any(self.edge_children[e, 0] >= 0
               for c in self.active for e in self.cell_edges[c]):
            raise MeshError("only conforming meshes can be written")
        used = np.unique(self.cell_vertices[self.active])
        new_id = {int(v): i for i, v in enumerate(used)}
        faces = self.boundary_faces()
        lines = [f"{len(used)} {self.n_active} {len(faces)} {len(self.curved)}"]
        lines += [f"{x:.17g} {y:.17g}" for x, y in self.vertices[used]]
        for c in self.active:
            v = [new_id[int(i)] for i in self.cell_vertices[c]]
            lines.append(f"{v[0]} {v[1]} {v[2]} {v[3]} {int(self.cell_material[c])}")
        for c, f, m in faces:
            a, b = FACE_VERTICES[f]
            va, vb = self.cell_vertices[c, a], self.cell_vertices[c, b]
            lines.append(f"{new_id[int(va)]} {new_id[int(vb)]} {m}")
        for m, circ in sorted(self.curved.items()):
            lines.append(f"circle {m} {circ.center[0]:.17g} {circ.center[1]:.17g} {circ.radius:.17g}")
        return "\n".join(lines) + "\n"


def read_mesh(path_or_text):
    """Parse the plain-text mesh format.

    ::

        nv nc nf [ncurved]
        x y                      (nv lines)
        v0 v1 v2 v3 material     (nc lines, counterclockwise, 0 fluid / 1 solid)
        va vb marker             (nf lines, boundary faces)
        circle marker cx cy r    (ncurved lines, boundary snapped to a circle)

    Blank lines and lines starting with ``#`` are ignored.
    """
    text = str(path_or_text)
    if "\n" not in text:
        text = Path(text).read_text()
    rows = [ln.split() for ln in text.splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")]
    head = [int(t) for t in rows[0]]
    nv, nc, nf = head[:3]
    ncurved = head[3] if len(head) > 3 else 0
    pos = 1
    vertices = [(float(r[0]), float(r[1])) for r in rows[pos:pos + nv]]
    pos += nv
    cells = [tuple(int(t) for t in r[:4]) for r in rows[pos:pos + nc]]
    mats = [int(r[4]) if len(r) > 4 else FLUID for r in rows[pos:pos + nc]]
    pos += nc
    faces = [(int(r[0]), int(r[1]), int(r[2])) for r in rows[pos:pos + nf]]
    pos += nf
    curved = {}
    for r in rows[pos:pos + ncurved]:
        if r[0] != "circle":
            raise MeshError(f"unknown curved boundary kind {r[0]!r}")
        curved[int(r[1])] = Circle((float(r[2]), float(r[3])), float(r[4]))
    return QuadMesh.from_arrays(vertices, cells, mats, faces, curved)


def reference_coordinates(quad, x, tol=1e-12, max_iter=50):
    """Invert the bilinear map of ``quad`` (4x2 corners) at ``x`` by damped Newton."""
    quad = np.asarray(quad, dtype=float)
    xi = np.zeros(2)
    sx = np.array([-1.0, 1.0, 1.0, -1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0])
    scale = max(np.ptp(quad[:, 0]), np.ptp(quad[:, 1]))
    for _ in range(max_iter):
        n = 0.25 * (1 + sx * xi[0]) * (1 + sy * xi[1])
        dn = np.stack([0.25 * sx * (1 + sy * xi[1]), 0.25 * sy * (1 + sx * xi[0])], axis=1)
        r = n @ quad - x
        if np.linalg.norm(r) <= tol * scale:
            return xi, True
        jac = quad.T @ dn
        step = np.linalg.solve(jac, r)
        damp = 1.0
        while damp > 1e-3:
            trial = xi - damp * step
            nt = 0.25 * (1 + sx * trial[0]) * (1 + sy * trial[1])
            if np.linalg.norm(nt @ quad - x) < np.linalg.norm(r) or damp < 2e-3:
                break
            damp *= 0.5
        xi = trial
        if np.max(np.abs(xi)) > 10:
            return xi, False
    return xi, np.linalg.norm(r) <= 1e3 * tol * scale


class _Builder:
    """Mutable copy of a mesh used while refining."""

    def __init__(self, mesh):
        self.m = mesh
        self.vertices = mesh.vertices.tolist()
        self.cv = mesh.cell_vertices.tolist()
        self.ce = mesh.cell_edges.tolist()
        self.level = mesh.cell_level.tolist()
        self.parent = mesh.cell_parent.tolist()
        self.children = mesh.cell_children.tolist()
        self.material = mesh.cell_material.tolist()
        self.ev = mesh.edge_vertices.tolist()
        self.ech = mesh.edge_children.tolist()
        self.epar = mesh.edge_parent.tolist()
        self.emid = mesh.edge_midpoint.tolist()
        self.emark = mesh.edge_marker.tolist()

    def _new_edge(self, a, b, marker, parent=-1):
        self.ev.append([a, b])
        self.ech.append([-1, -1])
        self.epar.append(parent)
        self.emid.append(-1)
        self.emark.append(marker)
        return len(self.ev) - 1

    def _split_edge(self, e):
        if self.ech[e][0] >= 0:
            return
        a, b = self.ev[e]
        p = 0.5 * (np.asarray(self.vertices[a]) + np.asarray(self.vertices[b]))
        marker = self.emark[e]
        if marker in self.m.curved:
            p = self.m.curved[marker].project(p)
        self.vertices.append([float(p[0]), float(p[1])])
        mid = len(self.vertices) - 1
        self.emid[e] = mid
        c0 = self._new_edge(a, mid, marker, e)
        c1 = self._new_edge(mid, b, marker, e)
        self.ech[e] = [c0, c1]

    def _half(self, e, v):
        return self.ech[e][0] if self.ev[e][0] == v else self.ech[e][1]

    def refine_cell(self, c):
        v0, v1, v2, v3 = self.cv[c]
        e0, e1, e2, e3 = self.ce[c]
        for e in (e0, e1, e2, e3):
            self._split_edge(e)
        m0, m1, m2, m3 = (self.emid[e] for e in (e0, e1, e2, e3))
        P = lambda i: np.asarray(self.vertices[i])  # noqa: E731
        ctr = 0.5 * (P(m0) + P(m1) + P(m2) + P(m3)) - 0.25 * (P(v0) + P(v1) + P(v2) + P(v3))
        self.vertices.append([float(ctr[0]), float(ctr[1])])
        cc = len(self.vertices) - 1
        ia = self._new_edge(m0, cc, 0)
        ib = self._new_edge(cc, m1, 0)
        idd = self._new_edge(cc, m2, 0)
        iff = self._new_edge(m3, cc, 0)
        kids = [
            ([v0, m0, cc, m3], [self._half(e0, v0), ia, iff, self._half(e3, v0)]),
            ([m0, v1, m1, cc], [self._half(e0, v1), self._half(e1, v1), ib, ia]),
            ([cc, m1, v2, m2], [ib, self._half(e1, v2), self._half(e2, v2), idd]),
            ([m3, cc, m2, v3], [iff, idd, self._half(e2, v3), self._half(e3, v3)]),
        ]
        ids = []
        for verts, edges in kids:
            self.cv.append(verts)
            self.ce.append(edges)
            self.level.append(self.level[c] + 1)
            self.parent.append(c)
            self.children.append([-1, -1, -1, -1])
            self.material.append(self.material[c])
            ids.append(len(self.cv) - 1)
        self.children[c] = ids

    def finish(self):
        return QuadMesh(self.vertices, self.cv, self.ce, self.level, self.parent,
                        self.children, self.material, self.ev, self.ech, self.epar,
                        self.emid, self.emark, self.m.curved)
