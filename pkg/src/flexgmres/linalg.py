"""Small dense/sparse kernels shared by the solvers.

Vectors are 1-D ``complex128`` numpy arrays and dense matrices are 2-D numpy
arrays stored column by column in the sense that a basis ``V`` keeps its
vectors as columns ``V[:, i]``.  Real inputs are promoted to complex.
Sparse matrices are ``scipy.sparse.csr_array`` instances.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

REORTH_ETA = 1.0 / np.sqrt(2.0)
EPS = np.finfo(np.float64).eps

CsrMatrix = sp.csr_array


def as_vector(x) -> np.ndarray:
    """Return ``x`` as a contiguous 1-D complex vector (copying if needed)."""
    v = np.asarray(x, dtype=np.complex128)
    if v.ndim != 1:
        v = v.reshape(-1)
    return v


def as_operator(A) -> spla.LinearOperator:
    """Wrap a dense array, sparse matrix or LinearOperator as a LinearOperator."""
    if isinstance(A, spla.LinearOperator):
        return A
    if sp.issparse(A) or isinstance(A, np.ndarray):
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"operator must be square, got shape {A.shape}")
        return spla.aslinearoperator(A)
    raise TypeError(f"cannot interpret {type(A).__name__} as a linear operator")


def mgs_orthogonalize(w, V, eta: float = REORTH_ETA):
    """Orthogonalize ``w`` against the orthonormal columns of ``V``.

    Modified Gram-Schmidt, followed by a second pass if the norm dropped
    below ``eta`` times the input norm.  Returns ``(h, w_perp, h_next)`` with
    ``w = V @ h + w_perp`` and ``h_next = ||w_perp||``.  A zero ``h_next`` is
    a valid outcome (breakdown) and is left for the caller to interpret.
    """
    w = as_vector(w).copy()
    V = np.asarray(V)
    j = 0 if V.size == 0 else V.shape[1]
    h = np.zeros(j, dtype=np.complex128)
    norm_in = np.linalg.norm(w)
    for i in range(j):
        c = np.vdot(V[:, i], w)
        h[i] += c
        w -= c * V[:, i]
    norm_out = np.linalg.norm(w)
    if j and norm_out < eta * norm_in:
        for i in range(j):
            c = np.vdot(V[:, i], w)
            h[i] += c
            w -= c * V[:, i]
        norm_out = np.linalg.norm(w)
    return h, w, float(norm_out)


def split_against_span(v, W):
    """Split ``v = p + u`` with ``p`` in range(W) and ``u`` orthogonal to it.

    ``W`` must have orthonormal columns (it may have zero columns).  A second
    projection pass is applied when cancellation is significant.
    """
    v = as_vector(v)
    W = np.asarray(W)
    if W.size == 0:
        return np.zeros_like(v), v.copy()
    c = W.conj().T @ v
    u = v - W @ c
    if np.linalg.norm(u) < REORTH_ETA * np.linalg.norm(v):
        c2 = W.conj().T @ u
        u = u - W @ c2
        c = c + c2
    return W @ c, u


def dense_solve(A, w) -> np.ndarray:
    """Solve ``A z = w`` by pivoted LU; raise ``LinAlgError`` if singular."""
    A = np.asarray(A)
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            return sla.solve(A, as_vector(w))
        except sla.LinAlgWarning as exc:
            raise np.linalg.LinAlgError(f"matrix is singular to working precision: {exc}")


class DenseLU:
    """Reusable LU factorization with the same singularity policy as :func:`dense_solve`."""

    def __init__(self, A):
        A = np.asarray(A, dtype=np.complex128)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got shape {A.shape}")
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            try:
                self._lu = sla.lu_factor(A)
            except sla.LinAlgWarning as exc:
                raise np.linalg.LinAlgError(f"matrix is singular: {exc}")
        self.shape = A.shape

    def solve(self, w) -> np.ndarray:
        return sla.lu_solve(self._lu, as_vector(w))


def csr_matvec(A, x) -> np.ndarray:
    if not sp.issparse(A):
        raise TypeError("csr_matvec expects a scipy sparse matrix")
    x = np.asarray(x)
    if x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape}, vector {x.shape}")
    return A @ x


def _givens(a: complex, b: complex):
    """Return ``(c, s, r)`` such that [[conj(c), conj(s)], [-s, c]] maps (a, b) to (r, 0)."""
    r = np.hypot(abs(a), abs(b))
    if r == 0.0:
        # swap: the residual carries over unchanged
        return 0j, 1.0 + 0j, 0j
    return a / r, b / r, r


@dataclass
class GivensQR:
    """Incremental QR of a growing upper Hessenberg matrix by plane rotations.

    Columns are appended one at a time with :meth:`add_column`; after ``m``
    columns ``R`` holds the rotated triangle, ``g`` the rotated right-hand
    side ``Q^* beta e_1`` and ``|g[m]|`` the least-squares residual norm.
    ``pivots[j]`` keeps the diagonal entry of column ``j`` *before* its own
    rotation, which is the last diagonal entry of the rotated square block
    used for the Galerkin (FFOM) solve.
    """

    beta: float
    capacity: int
    R: np.ndarray = field(init=False)
    g: np.ndarray = field(init=False)
    cs: list = field(init=False, default_factory=list)
    sn: list = field(init=False, default_factory=list)
    pivots: list = field(init=False, default_factory=list)
    m: int = field(init=False, default=0)
    _g_unrotated: complex = field(init=False, default=0j, repr=False)

    def __post_init__(self):
        self.R = np.zeros((self.capacity + 1, self.capacity), dtype=np.complex128)
        self.g = np.zeros(self.capacity + 1, dtype=np.complex128)
        self.g[0] = self.beta

    def add_column(self, h) -> float:
        """Append Hessenberg column ``h`` (length m+2) and return the new residual norm."""
        j = self.m
        col = np.array(h[: j + 2], dtype=np.complex128)
        for i in range(j):
            c, s = self.cs[i], self.sn[i]
            top = np.conj(c) * col[i] + np.conj(s) * col[i + 1]
            col[i + 1] = -s * col[i] + c * col[i + 1]
            col[i] = top
        self.pivots.append(col[j])
        if np.hypot(abs(col[j]), abs(col[j + 1])) <= EPS * np.linalg.norm(h[: j + 2]):
            # column lies in the span of the previous ones to working precision
            col[j] = col[j + 1] = 0.0
        c, s, r = _givens(col[j], col[j + 1])
        self.cs.append(c)
        self.sn.append(s)
        col[j], col[j + 1] = r, 0.0
        self.R[: j + 2, j] = col
        gj = self.g[j]
        self._g_unrotated = gj
        self.g[j] = np.conj(c) * gj
        self.g[j + 1] = -s * gj
        self.m += 1
        return float(abs(self.g[j + 1]))

    @property
    def residual(self) -> float:
        return float(abs(self.g[self.m]))

    def lsq_solution(self, m: int | None = None):
        """Least-squares coefficients for the first ``m`` columns, or ``None`` if singular."""
        m = self.m if m is None else m
        if m == 0:
            return np.zeros(0, dtype=np.complex128)
        T = self.R[:m, :m]
        if not _well_conditioned(T):
            return None
        return sla.solve_triangular(T, self.g[:m])

    def square_solution(self):
        """Solve ``H_m y = beta e_1`` using the rotated triangle; ``None`` if singular.

        The first ``m-1`` rotations act on rows ``0..m-1`` only, so applied to
        the square block they leave an upper triangle whose last diagonal
        entry is the unrotated pivot.
        """
        m = self.m
        if m == 0:
            return np.zeros(0, dtype=np.complex128)
        T = self.R[:m, :m].copy()
        T[m - 1, m - 1] = self.pivots[m - 1]
        rhs = self.g[:m].copy()
        rhs[m - 1] = self._g_unrotated
        if not _well_conditioned(T):
            return None
        return sla.solve_triangular(T, rhs)


def _well_conditioned(T: np.ndarray) -> bool:
    d = np.abs(np.diag(T))
    if d.size == 0:
        return True
    if d.min() == 0.0 or not np.all(np.isfinite(T)):
        return False
    return np.linalg.cond(T) <= 1.0 / (100.0 * EPS)


def hessenberg_lsq(H, beta: float):
    """Minimize ``||beta e_1 - H y||`` for an (m+1) x m upper Hessenberg ``H``.

    Returns ``(y, rho, singular)``; ``y`` is ``None`` when the rotated
    triangle is numerically singular.
    """
    H = np.asarray(H, dtype=np.complex128)
    m = H.shape[1]
    qr = GivensQR(beta, m)
    for j in range(m):
        qr.add_column(H[: j + 2, j])
    y = qr.lsq_solution()
    return y, qr.residual, y is None


def hessenberg_square_solve(H, beta: float):
    """Solve ``H_m y = beta e_1`` for the square upper block of ``H``.

    ``H`` may be either the (m+1) x m Hessenberg matrix or its m x m block.
    Returns ``y`` or ``None`` when ``H_m`` is singular to working precision.
    """
    H = np.asarray(H, dtype=np.complex128)
    m = H.shape[1]
    Hm = np.zeros((m + 1, m), dtype=np.complex128)
    Hm[: H.shape[0]] = H[: m + 1]
    qr = GivensQR(beta, m)
    for j in range(m):
        qr.add_column(Hm[: j + 2, j])
    return qr.square_solution()
