"""Generic assembly of pointwise flux forms.

A form is described at quadrature points by a *flux* ``O = flux(S, ctx)``
with ``S[n, c, s]`` the value (``s = 0``) and gradient (``s = 1, 2``) of
component ``c`` of the state, and ``O[n, c, s]`` the coefficient that
multiplies the test function value or gradient of component ``c``:

    A(U)(Psi) = sum_q w_q sum_{c,s} O[q, c, s] * Psi[q, c, s]

The linearization is given by ``dflux(S, dS, ctx)``.  Its dense pointwise
tangent is recovered by probing unit directions, which keeps the element
matrices exact without hand-writing every block.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from .fespace import (DofHandler, FESpace, gauss_1d, gauss_tensor, geometry, inverse_2x2,
                      lagrange_2d, map_points)

CHUNK_ENTRIES = 16_000_000


@dataclasses.dataclass
class PointContext:
    """Per-quadrature-point data available to flux functions."""

    x: np.ndarray                  # physical coordinates (n, 2)
    material: np.ndarray           # material id of the owning cell (n,)
    cell: np.ndarray               # active index of the owning cell (n,)
    normal: np.ndarray | None = None   # outward unit normal on faces (n, 2)
    marker: np.ndarray | None = None  # boundary marker on faces (n,)


@dataclasses.dataclass
class PointData:
    """Shape data of one integration group (cells x points)."""

    cells: np.ndarray       # active cell indices (nc,)
    weights: np.ndarray     # (nc, nq) integration weights incl. measure
    ctx: PointContext
    shapes: dict            # degree -> (nc, nq, nloc, 3) value/grad table


def face_points(face, npts):
    """Reference points and 1D weights on local ``face``."""
    t, w = gauss_1d(npts)
    fixed = -1.0 if face in (0, 3) else 1.0
    if face in (0, 2):
        pts = np.column_stack([t, np.full_like(t, fixed)])
    else:
        pts = np.column_stack([np.full_like(t, fixed), t])
    return pts, w


def _shape_tables(space, pts, jinv, nc):
    shapes = {}
    for k in sorted(set(space.comp_degree) | {1}):
        phi, dphi = lagrange_2d(k, pts)
        grad = np.einsum("qaj,cqji->cqai", dphi, jinv)
        tab = np.empty((nc, len(pts), phi.shape[1], 3))
        tab[..., 0] = phi[None]
        tab[..., 1:] = grad
        shapes[k] = tab
    return shapes


def cell_point_data(space: FESpace, cells, npts):
    mesh = space.mesh
    pts, w = gauss_tensor(npts)
    ids = mesh.active[cells]
    corners = mesh.vertices[mesh.cell_vertices[ids]]
    jac, det = geometry(corners, pts)
    jinv, _ = inverse_2x2(jac)
    xq = map_points(corners, pts)
    nq = len(pts)
    ctx = PointContext(
        x=xq.reshape(-1, 2),
        material=np.repeat(mesh.cell_material[ids], nq),
        cell=np.repeat(cells, nq))
    return PointData(cells, det * w[None], ctx, _shape_tables(space, pts, jinv, len(cells)))


def face_point_data(space: FESpace, cells, face, npts, markers=None):
    mesh = space.mesh
    pts, w = face_points(face, npts)
    ids = mesh.active[cells]
    corners = mesh.vertices[mesh.cell_vertices[ids]]
    jac, _ = geometry(corners, pts)
    jinv, _ = inverse_2x2(jac)
    tdir = 0 if face in (0, 2) else 1
    t = jac[..., :, tdir]
    ds = np.linalg.norm(t, axis=-1)
    sign = 1.0 if face in (0, 1) else -1.0
    normal = sign * np.stack([t[..., 1], -t[..., 0]], axis=-1) / ds[..., None]
    nq = len(pts)
    ctx = PointContext(
        x=map_points(corners, pts).reshape(-1, 2),
        material=np.repeat(mesh.cell_material[ids], nq),
        cell=np.repeat(cells, nq),
        normal=normal.reshape(-1, 2),
        marker=None if markers is None else np.repeat(markers, nq))
    return PointData(cells, ds * w[None], ctx, _shape_tables(space, pts, jinv, len(cells)))


def _state(space, x_full, pd):
    nc, nq = pd.weights.shape
    S = np.empty((nc, nq, space.n_comp, 3))
    for c in range(space.n_comp):
        coef = x_full[space.cell_dofs(c)[pd.cells]]
        S[:, :, c, :] = np.einsum("cqas,ca->cqs", pd.shapes[space.comp_degree[c]], coef)
    return S.reshape(nc * nq, space.n_comp, 3)


def evaluate_state(space, x_full, pd):
    return _state(space, x_full, pd)


def _chunks(n, per_item):
    size = max(1, CHUNK_ENTRIES // max(per_item, 1))
    for start in range(0, n, size):
        yield np.arange(start, min(n, start + size))


class Integrator:
    """Integration groups over cells and boundary faces of one space.

    Parameters
    ----------
    space : FESpace
    npts : int
        Gauss points per direction.
    cell_filter : callable(mesh, active_idx) -> bool mask, optional
    faces : list of (active index, local face, marker), optional
    """

    def __init__(self, space: FESpace, npts=5, cell_filter=None, faces=None):
        self.space = space
        self.npts = npts
        n = space.mesh.n_active
        cells = np.arange(n)
        if cell_filter is not None:
            cells = cells[cell_filter(space.mesh, cells)]
        self.cells = cells
        self.faces = list(faces or [])
        nloc = sum((space.comp_degree[c] + 1) ** 2 for c in range(space.n_comp))
        self.nloc = nloc

    def groups(self, matrix=False):
        per = 4 * self.nloc ** 2 if matrix else 3 * self.npts ** 2 * self.nloc
        for idx in _chunks(len(self.cells), per):
            yield cell_point_data(self.space, self.cells[idx], self.npts)
        if self.faces:
            arr = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
            for f in range(4):
                sel = arr[arr[:, 1] == f]
                for idx in _chunks(len(sel), per):
                    yield face_point_data(self.space, sel[idx, 0], f, self.npts, sel[idx, 2])

    # ------------------------------------------------------------------
    def functional(self, x_full, density):
        """Integral of a scalar pointwise ``density(S, ctx)``."""
        total = 0.0
        for pd in self.groups():
            S = _state(self.space, x_full, pd)
            total += np.sum(pd.weights.ravel() * density(S, pd.ctx))
        return float(total)

    def vector(self, x_full, flux):
        """Assemble ``sum_q w O : Psi`` for every basis function of the space."""
        space = self.space
        out = np.zeros(space.n_dofs)
        for pd in self.groups():
            nc, nq = pd.weights.shape
            O = flux(_state(space, x_full, pd), pd.ctx)
            O = O.reshape(nc, nq, space.n_comp, 3) * pd.weights[..., None, None]
            for c in range(space.n_comp):
                loc = np.einsum("cqas,cqs->ca", pd.shapes[space.comp_degree[c]], O[:, :, c, :])
                dofs = space.cell_dofs(c)[pd.cells]
                out += np.bincount(dofs.ravel(), loc.ravel(), minlength=space.n_dofs)
        return out

    def weighted_vector(self, x_full, flux, y_full, pu: DofHandler):
        """Localize ``sum_q w O : Y`` with the scalar partition of unity ``pu``.

        Entry ``i`` is ``sum_q w O : (Y psi_i)`` for the (unconstrained) nodal
        basis function ``psi_i`` of ``pu``; the product rule gives the
        gradient part ``grad(Y) psi_i + Y grad(psi_i)``.
        """
        space = self.space
        out = np.zeros(pu.n_dofs)
        for pd in self.groups():
            nc, nq = pd.weights.shape
            O = flux(_state(space, x_full, pd), pd.ctx)
            Y = _state(space, y_full, pd)
            a = np.einsum("ncs,ncs->n", O, Y).reshape(nc, nq) * pd.weights
            b = np.einsum("nci,nc->ni", O[:, :, 1:], Y[:, :, 0]).reshape(nc, nq, 2)
            b = b * pd.weights[..., None]
            tab = pd.shapes[pu.k]
            loc = (np.einsum("cqa,cq->ca", tab[..., 0], a)
                   + np.einsum("cqai,cqi->ca", tab[..., 1:], b))
            dofs = pu.cell_dofs[pd.cells]
            out += np.bincount(dofs.ravel(), loc.ravel(), minlength=pu.n_dofs)
        return out

    def matrix(self, x_full, flux_tangent):
        """Assemble the bilinear form with pointwise tangent ``D[n, i, s, j, t]``.

        Rows are test DoFs, columns trial DoFs, both in the full numbering.
        """
        space = self.space
        n = space.n_dofs
        nc_ = space.n_comp
        acc = sp.csr_matrix((n, n))
        for pd in self.groups(matrix=True):
            nc, nq = pd.weights.shape
            S = _state(space, x_full, pd)
            D = flux_tangent(S, pd.ctx).reshape(nc, nq, nc_, 3, nc_, 3)
            D = D * pd.weights[:, :, None, None, None, None]
            rows, cols, vals = [], [], []
            for i in range(nc_):
                ti = pd.shapes[space.comp_degree[i]]
                ri = space.cell_dofs(i)[pd.cells]
                for j in range(nc_):
                    Dij = D[:, :, i, :, j, :]
                    if not np.any(Dij):
                        continue
                    tj = pd.shapes[space.comp_degree[j]]
                    tmp = np.einsum("cqst,cqbt->cqsb", Dij, tj)
                    na, nb = ti.shape[2], tj.shape[2]
                    K = np.matmul(ti.transpose(0, 2, 1, 3).reshape(nc, na, nq * 3),
                                  tmp.reshape(nc, nq * 3, nb))
                    cj = space.cell_dofs(j)[pd.cells]
                    rows.append(np.repeat(ri, nb, axis=1).ravel())
                    cols.append(np.tile(cj, (1, na)).ravel())
                    vals.append(K.ravel())
            if rows:
                acc = acc + sp.csr_matrix(
                    (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                    shape=(n, n))
        acc.sum_duplicates()
        return acc


def tangent_from_directional(dflux, S, ctx, directions):
    """Dense tangent ``D[n, i, s, j, t]`` from a directional derivative.

    ``directions`` lists the ``(j, t)`` state slots the flux depends on.
    """
    n, ncomp, _ = S.shape
    D = np.zeros((n, ncomp, 3, ncomp, 3))
    for j, t in directions:
        dS = np.zeros_like(S)
        dS[:, j, t] = 1.0
        D[:, :, :, j, t] = dflux(S, dS, ctx)
    return D
