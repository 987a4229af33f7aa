"""Sparse direct solves and a damped Newton method."""

from __future__ import annotations

import dataclasses
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class SingularMatrixError(RuntimeError):
    def __init__(self, msg, pivot=None):
        super().__init__(msg)
        self.pivot = pivot


class NewtonError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


try:
    from cvxopt import matrix as _cvx_matrix, spmatrix as _cvx_spmatrix, umfpack as _umfpack
except ImportError:     # pragma: no cover - optional backend
    _umfpack = None

# growth of a random solve on the equilibrated matrix that counts as singular
SINGULAR_GROWTH = 1e12


class Factorization:
    """LU factorization of a square sparse matrix with a residual check on solve.

    Rows and columns are equilibrated (scaled by their largest entry)
    before factorizing, so the singularity test does not depend on the
    physical scaling of the blocks.  UMFPACK (through cvxopt) is used when
    available since its ordering needs far less memory on the enriched
    systems; SuperLU is the fallback.
    """

    def __init__(self, A, backend=None):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.A = A
        self.backend = backend or ("umfpack" if _umfpack is not None else "superlu")
        if self.backend not in ("umfpack", "superlu"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if A.shape[0] == 0:
            self.lu = None
            return
        absA = abs(A)
        rmax = absA.max(axis=1).toarray().ravel()
        if np.any(rmax == 0):
            pivot = int(np.flatnonzero(rmax == 0)[0])
            raise SingularMatrixError(f"singular matrix: empty row {pivot}", pivot)
        self.dr = 1.0 / rmax
        cmax = (sp.diags(self.dr) @ absA).max(axis=0).toarray().ravel()
        if np.any(cmax == 0):
            pivot = int(np.flatnonzero(cmax == 0)[0])
            raise SingularMatrixError(f"singular matrix: empty column {pivot}", pivot)
        self.dc = 1.0 / cmax
        B = (sp.diags(self.dr) @ A @ sp.diags(self.dc)).tocsc()
        if self.backend == "umfpack":
            self._factor_umfpack(B)
        else:
            self._factor_superlu(B)

    def _factor_superlu(self, B):
        try:
            self.lu = spla.splu(B, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularMatrixError(f"singular matrix ({exc})") from exc
        diag = np.abs(self.lu.U.diagonal())
        if not np.all(np.isfinite(diag)) or diag.min() <= 1e-12 * max(diag.max(), 1e-300):
            pivot = int(self.lu.perm_c[np.argmin(diag)])
            raise SingularMatrixError(f"numerically singular matrix, pivot {pivot}", pivot)

    def _factor_umfpack(self, B):
        B = B.tocoo()
        self._B = _cvx_spmatrix(_cvx_matrix(B.data), _cvx_matrix(B.row.astype(np.int32)),
                                _cvx_matrix(B.col.astype(np.int32)), B.shape)
        try:
            self.lu = _umfpack.numeric(self._B, _umfpack.symbolic(self._B))
        except ArithmeticError as exc:
            raise SingularMatrixError(f"singular matrix ({exc})") from exc
        # UMFPACK only reports exact zero pivots: test the growth of one solve
        b = np.random.default_rng(0).standard_normal(B.shape[0])
        b /= np.linalg.norm(b)
        y = self._lu_solve(b, "N")
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > SINGULAR_GROWTH:
            raise SingularMatrixError("numerically singular matrix")

    def _lu_solve(self, b, trans):
        if self.backend == "superlu":
            return self.lu.solve(b, trans=trans)
        out = _cvx_matrix(np.ascontiguousarray(b, dtype=float))
        _umfpack.solve(self._B, self.lu, out, trans=trans)
        return np.array(out).ravel()

    def _solve(self, b, trans):
        if trans == "T":
            return self.dr * self._lu_solve(self.dc * b, "T")
        return self.dc * self._lu_solve(self.dr * b, "N")

    def solve(self, b, trans="N", check=True):
        b = np.asarray(b, dtype=float)
        if self.lu is None:
            return np.zeros_like(b)
        x = self._solve(b, trans)
        A = self.A.T if trans == "T" else self.A
        r = b - A @ x
        nb = np.linalg.norm(b)
        # one step of iterative refinement keeps the residual check strict
        if np.linalg.norm(r) > 1e-10 * nb:
            x += self._solve(r, trans)
            r = b - A @ x
        if check and np.linalg.norm(r) > 1e-8 * max(nb, 1e-300):
            log.warning("linear solve residual %.3e (|b| = %.3e)", np.linalg.norm(r), nb)
        return x


def solve_sparse(A, b):
    """Solve ``A x = b`` by sparse LU; raises :class:`SingularMatrixError`."""
    return Factorization(A).solve(b)


@dataclasses.dataclass
class NewtonSettings:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_iter: int = 25
    backtrack: float = 0.5
    max_backtracks: int = 10

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def newton_solve(residual_fn, jacobian_fn, x0, settings=None, fixed_steps=None):
    """Damped Newton iteration for ``residual_fn(x) = 0``.

    A trial step ``x + lam dx`` is accepted when the simplified Newton
    correction ``J(x)^-1 r(x + lam dx)`` is shorter than ``dx`` (natural
    monotonicity, insensitive to the row scaling of the residual) or when
    the residual norm decreases.

    Parameters
    ----------
    residual_fn, jacobian_fn : callables on the reduced vector
    x0 : initial guess
    settings : NewtonSettings
    fixed_steps : int, optional
        Perform exactly this many steps and return without a convergence
        check (used for budgeted enriched solves).

    Returns
    -------
    x, history
        ``history`` is a list of dicts with keys ``it``, ``res`` and ``step``.
    """
    settings = settings or NewtonSettings()
    x = np.array(x0, dtype=float, copy=True)
    r = residual_fn(x)
    r0 = np.linalg.norm(r)
    history = [{"it": 0, "res": r0, "step": 0.0}]
    n_steps = fixed_steps if fixed_steps is not None else settings.max_iter
    converged = lambda res: res <= settings.abs_tol or res <= settings.rel_tol * r0  # noqa: E731
    for it in range(1, n_steps + 1):
        res = np.linalg.norm(r)
        if fixed_steps is None and converged(res):
            return x, history
        lu = Factorization(jacobian_fn(x))
        dx = lu.solve(-r)
        ndx = np.linalg.norm(dx)
        if fixed_steps is None and ndx <= 1e-14 * max(np.linalg.norm(x), 1e-300):
            # update at round-off level: the residual cannot be reduced further
            history.append({"it": it, "res": float(res), "step": 0.0})
            return x, history
        lam = 1.0
        for _ in range(settings.max_backtracks + 1):
            x_try = x + lam * dx
            try:
                r_try = residual_fn(x_try)
            except ValueError:      # e.g. a tangled trial state
                r_try = None
            if r_try is not None and np.all(np.isfinite(r_try)):
                if np.linalg.norm(r_try) < res:
                    break
                if np.linalg.norm(lu.solve(-r_try, check=False)) < (1.0 - 0.25 * lam) * ndx:
                    break
            lam *= settings.backtrack
        else:
            if fixed_steps is not None:
                break
            raise NewtonError(f"line search failed at iteration {it} (|r| = {res:.3e})", history)
        x, r = x_try, r_try
        history.append({"it": it, "res": float(np.linalg.norm(r)), "step": lam})
        log.debug("newton %d: |r| = %.3e, step %.3g", it, history[-1]["res"], lam)
    res = np.linalg.norm(r)
    if fixed_steps is None and not converged(res):
        raise NewtonError(f"no convergence in {settings.max_iter} iterations (|r| = {res:.3e})",
                          history)
    return x, history
