"""Shared finite-difference machinery: half-box link assembly and SPD solves.

All elliptic problems in the package are even in z, so they are assembled on
the upper half of the box (z >= 0 including the plane z = 0).  Links lying in
the plane carry half weight and links leaving it full weight, which is the
energy of the even reflection up to a global factor; the stationarity system
is then exactly the reflected stencil.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ConvergenceError

try:
    import pyamg
except ImportError:  # pragma: no cover - pyamg is a declared dependency
    pyamg = None


def upper_shape(grid):
    """Shape of the z >= 0 sub-box of a GridField lattice."""
    return grid.shape[:-1] + (grid.shape[-1] - grid.iz0,)


def link_slices(shape, axis):
    """Index arrays (flat) of the two endpoints of every axis-link."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    left = [slice(None)] * len(shape)
    left[axis] = slice(0, -1)
    right = [slice(None)] * len(shape)
    right[axis] = slice(1, None)
    return idx[tuple(left)].ravel(), idx[tuple(right)].ravel()


def plane_halved(weights, axis, ndim):
    """Halve the weights of links lying inside the plane z = 0 (local k = 0)."""
    if axis == ndim - 1:
        return weights
    sl = [slice(None)] * ndim
    sl[-1] = 0
    weights = weights.copy()
    weights[tuple(sl)] *= 0.5
    return weights


def assemble_half_box(shape, dirichlet_mask, dirichlet_values, axis_weights):
    """Stiffness system of sum_links w * (v_i - v_j)^2 with Dirichlet folding.

    axis_weights[a] has shape = shape minus one along axis a (link weights,
    plane factors already applied).  Returns (A, b, unknown_index) where
    unknown_index maps lattice nodes to unknown numbers (-1 on Dirichlet).
    """
    total = int(np.prod(shape))
    free = ~dirichlet_mask.ravel()
    unknown_index = np.full(total, -1, dtype=np.int64)
    unknown_index[free] = np.arange(int(free.sum()))
    n_unknown = int(free.sum())
    vals_flat = dirichlet_values.ravel()

    diag = np.zeros(n_unknown)
    b = np.zeros(n_unknown)
    rows, cols, data = [], [], []
    for a, w in enumerate(axis_weights):
        li, ri = link_slices(shape, a)
        w = np.asarray(w).ravel()
        keep = w != 0.0
        li, ri, w = li[keep], ri[keep], w[keep]
        ul, ur = unknown_index[li], unknown_index[ri]
        both = (ul >= 0) & (ur >= 0)
        np.add.at(diag, ul[both], w[both])
        np.add.at(diag, ur[both], w[both])
        rows.append(ul[both])
        cols.append(ur[both])
        data.append(-w[both])
        rows.append(ur[both])
        cols.append(ul[both])
        data.append(-w[both])
        ld = (ul >= 0) & (ur < 0)
        np.add.at(diag, ul[ld], w[ld])
        np.add.at(b, ul[ld], w[ld] * vals_flat[ri[ld]])
        rd = (ul < 0) & (ur >= 0)
        np.add.at(diag, ur[rd], w[rd])
        np.add.at(b, ur[rd], w[rd] * vals_flat[li[rd]])

    A = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_unknown, n_unknown)).tocsr()
    A = A + sparse.diags(diag)
    return A.tocsr(), b, unknown_index.reshape(shape)


def solve_spd(A, b, tol, x0=None, maxiter=4000, rhs_shift=None,
              energy_every=0):
    """Preconditioned CG on the SPD stiffness system.

    Uses an algebraic multigrid preconditioner when available (Jacobi
    otherwise).  Returns (x, info) with info carrying iterations, the final
    relative residual, and an optional energy log (values of the quadratic
    functional at recorded iterations, non-increasing for CG).
    """
    if rhs_shift is not None:
        b = b + rhs_shift
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), {"iterations": 0, "residual": 0.0, "energy": []}

    if pyamg is not None and A.shape[0] > 400:
        M = pyamg.smoothed_aggregation_solver(A, max_coarse=100).aspreconditioner(
            cycle="V")
    else:
        inv_diag = 1.0 / A.diagonal()
        M = LinearOperator(A.shape, matvec=lambda v: inv_diag * v)

    count = {"it": 0}
    energy = []

    def callback(xk):
        count["it"] += 1
        if energy_every and count["it"] % energy_every == 0:
            energy.append(float(0.5 * xk @ (A @ xk) - b @ xk))

    x, flag = cg(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=M,
                 callback=callback)
    relres = float(np.linalg.norm(b - A @ x)) / bnorm
    if flag != 0 or relres > 10.0 * tol:
        raise ConvergenceError(
            f"CG stopped after {count['it']} iterations at residual {relres:.3e}")
    if energy_every:
        energy.append(float(0.5 * x @ (A @ x) - b @ x))
    return x, {"iterations": count["it"], "residual": relres, "energy": energy}


def scatter_even(grid, dirichlet_values_up, unknown_index_up, x):
    """Rebuild the full even field from upper-half Dirichlet data and unknowns."""
    up = dirichlet_values_up.copy()
    free = unknown_index_up >= 0
    up[free] = x[unknown_index_up[free]]
    full = np.empty(grid.shape)
    iz0 = grid.iz0
    full[..., iz0:] = up
    full[..., :iz0] = up[..., 1:grid.shape[-1] - iz0][..., ::-1]
    return grid.with_values(full, even_in_z=True)
