"""Sparse KKT solves for the per-step linearly constrained systems.

Unknowns are ordered node-major: degree of freedom 3*k + c is component c
at the k-th free node.  The constraint block carries one row per free node
whose extrapolated direction is non-degenerate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

DEFAULT_TOL = 1e-12
ROW_DROP_REL_TOL = 1e-12


class KktError(Exception):
    """Raised when a saddle-point solve fails its residual contract."""


@dataclass
class KktSystem:
    """System matrix, constraint rows and right-hand side of one solve.

    a : (N, N) sparse, symmetric positive definite on the free DOFs
    g : (M, N) sparse constraint rows, or None for an unconstrained solve
    rhs : (N,) vector
    """

    a: sp.spmatrix
    g: sp.spmatrix | None
    rhs: np.ndarray


@dataclass
class KktSolution:
    primal: np.ndarray
    multiplier: np.ndarray
    residual_primal: float
    residual_constraint: float


def assemble_constraint_rows(u_hat, free, row_drop_tol=None):
    """Rows of the linearized nodal constraint for directions ``u_hat``.

    Row for free node z carries the three entries u_hat(z) in that node's
    component columns; nodes with |u_hat(z)| below the drop tolerance get
    no row (the constraint direction is undefined there).

    Parameters
    ----------
    u_hat : (nv, 3) nodal field of constraint directions
    free : index array of free nodes, defining the column layout
    row_drop_tol : float, defaults to 1e-12 * max_z |u_hat(z)| over free z

    Returns
    -------
    (M, 3*len(free)) CSR matrix with M <= len(free).
    """
    u_hat = np.asarray(u_hat, dtype=float)
    directions = u_hat[free]
    norms = np.linalg.norm(directions, axis=1)
    if row_drop_tol is None:
        row_drop_tol = ROW_DROP_REL_TOL * (norms.max() if norms.size else 0.0)
    keep = np.flatnonzero(norms >= row_drop_tol) if norms.size else np.empty(0, dtype=int)
    m = keep.size
    rows = np.repeat(np.arange(m), 3)
    cols = (3 * keep[:, None] + np.arange(3)[None, :]).ravel()
    data = directions[keep].ravel()
    return sp.coo_matrix((data, (rows, cols)), shape=(m, 3 * len(free))).tocsr()


def solve_kkt(system, tol=DEFAULT_TOL):
    """Direct solve of the saddle-point system [[A, G^T], [G, 0]].

    Factorizes the full KKT matrix with sparse LU and verifies the residual
    contract ||A p + G^T m - rhs|| <= tol*(1 + ||rhs||) and
    ||G p|| <= tol*(1 + ||p||); one step of iterative refinement is applied
    if the first solve misses.  Raises :class:`KktError` on a singular
    matrix or an unmet tolerance.
    """
    a = system.a.tocsc()
    rhs = np.asarray(system.rhs, dtype=float)
    n = a.shape[0]
    g = system.g
    m = 0 if g is None else g.shape[0]

    if m == 0:
        kkt = a
        full_rhs = rhs
    else:
        kkt = sp.bmat([[a, g.T], [g, None]], format="csc")
        full_rhs = np.concatenate([rhs, np.zeros(m)])

    try:
        lu = splu(kkt)
    except RuntimeError as exc:
        raise KktError(f"KKT factorization failed (n={n}, m={m}): {exc}") from exc

    sol = lu.solve(full_rhs)
    if not np.all(np.isfinite(sol)):
        raise KktError(f"KKT solve produced non-finite values (n={n}, m={m})")

    def residuals(vec):
        r = kkt @ vec - full_rhs
        p = vec[:n]
        rp = np.linalg.norm(r[:n])
        rc = np.linalg.norm(g @ p) if m else 0.0
        return rp, rc, p

    rp, rc, primal = residuals(sol)
    bound_p = tol * (1.0 + np.linalg.norm(full_rhs))
    if rp > bound_p or rc > tol * (1.0 + np.linalg.norm(primal)):
        sol = sol + lu.solve(full_rhs - kkt @ sol)
        rp, rc, primal = residuals(sol)
    if rp > bound_p or rc > tol * (1.0 + np.linalg.norm(primal)):
        raise KktError(
            f"KKT residuals not reached (primal {rp:.3e}, constraint {rc:.3e}, "
            f"tol {tol:.1e}, n={n}, m={m}); system may be ill-conditioned"
        )
    return KktSolution(primal, sol[n:], rp, rc)
