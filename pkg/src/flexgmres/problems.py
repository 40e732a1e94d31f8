"""Test matrices."""

from __future__ import annotations

import scipy.sparse as sp


def generate_convdiff(n: int, peclet: float = 10.0) -> sp.csr_array:
    """Upwind 5-point convection-diffusion matrix on an ``n x n`` interior grid.

    Discretizes ``-Laplace(u) + peclet * (u_x + u_y)`` with homogeneous
    Dirichlet boundaries, scaled by ``h^2`` with ``h = 1/(n+1)``.  Unknowns
    are numbered row by row (x fastest).  With ``c = peclet * h`` each row
    reads ``(4 + 2c) u_P - (1 + c)(u_W + u_S) - u_E - u_N``, so interior
    rows sum to zero and the matrix is symmetric only for ``peclet = 0``.
    """
    if n < 2:
        raise ValueError("grid size must be at least 2")
    c = peclet / (n + 1)
    N = n * n
    rows, cols, vals = [], [], []
    for iy in range(n):
        for ix in range(n):
            p = iy * n + ix
            rows.append(p)
            cols.append(p)
            vals.append(4.0 + 2.0 * c)
            for dx, dy, v in ((-1, 0, -1.0 - c), (0, -1, -1.0 - c), (1, 0, -1.0), (0, 1, -1.0)):
                jx, jy = ix + dx, iy + dy
                if 0 <= jx < n and 0 <= jy < n:
                    rows.append(p)
                    cols.append(jy * n + jx)
                    vals.append(v)
    return sp.csr_array((vals, (rows, cols)), shape=(N, N))
