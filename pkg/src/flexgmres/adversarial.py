"""Worst-case preconditioners and systems on which the FGMRES bound is attained.

The step-k construction splits the current Arnoldi vector ``v_k = p_k + u_k``
against ``span(A Z_{k-1})`` and picks ``w_k = A z_k = p_k + y_k`` such that
the inner residual ``v_k - w_k`` has norm exactly ``mu`` and is orthogonal to
``span(A Z_k)``.  That makes the a posteriori estimate
``||r_k^FG|| <= ||r_{k-1}^FF|| ||r_k^P||`` an equality at every step.

Feeding the resulting ``w_j`` into a structured operator whose Krylov spaces
are ``span{v_j, d_j1, ..., d_j,k-1}`` makes an inner GMRES(k) reproduce the
same ``w_j``, so the equality also holds for FGMRES-GMRES(k).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import bounds
from .linalg import DenseLU, as_vector, mgs_orthogonalize, split_against_span
from .solver import InnerSolve, SolveTrace

# canonical candidates whose projection falls below this are skipped
PICK_TOL = 1e-8
# ||u_k|| may undershoot mu by this much before a step counts as infeasible
FEASIBILITY_SLACK = 1e-13


class InfeasibleStepError(ValueError):
    """``mu`` exceeds ``||u_k||``: no inner residual of norm ``mu`` keeps the step sharp."""


@dataclass
class WorstCaseState:
    """Running state of the worst-case construction.

    ``basis`` is an orthonormal basis of ``span(w_1..w_{k-1})``, ``residual``
    a vector parallel to the current FGMRES residual and ``v`` the Arnoldi
    vector the next step has to handle.
    """

    N: int
    basis: np.ndarray = field(init=False)
    residual: np.ndarray | None = None
    v: np.ndarray | None = None
    w_list: list = field(default_factory=list)

    def __post_init__(self):
        self.basis = np.zeros((self.N, 0), dtype=np.complex128)

    def start(self, v1) -> None:
        v1 = as_vector(v1)
        self.basis = np.zeros((self.N, 0), dtype=np.complex128)
        self.residual = v1.copy()
        self.v = v1.copy()
        self.w_list = []

    def push(self, w) -> None:
        w = as_vector(w)
        self.w_list.append(w)
        _, q, nq = mgs_orthogonalize(w, self.basis)
        if nq > 0:
            q = q / nq
            self.basis = np.column_stack([self.basis, q])
            self.residual = self.residual - q * np.vdot(q, self.residual)


@dataclass(frozen=True)
class WorstCaseStep:
    w: np.ndarray
    y: np.ndarray
    alpha: float
    beta_coef: float
    u_norm: float
    sharp: bool


def pick_orthogonal_unit(N: int, *frames) -> np.ndarray:
    """First canonical basis vector with a usable component orthogonal to ``frames``.

    Each frame is either an N x r array with orthonormal columns or a single
    unit vector.  Deterministic: candidates are tried in index order.
    """
    cols = [np.asarray(f).reshape(N, -1) for f in frames if f is not None and np.asarray(f).size]
    F = np.column_stack(cols) if cols else np.zeros((N, 0), dtype=np.complex128)
    for i in range(N):
        e = np.zeros(N, dtype=np.complex128)
        e[i] = 1.0
        if not F.shape[1]:
            return e
        _, c, nc = mgs_orthogonalize(e, F, eta=2.0)  # always two passes
        if nc > PICK_TOL:
            return c / nc
    raise ValueError("no direction orthogonal to the given frames (dimension too small)")


def worst_case_step(state: WorstCaseState, mu: float) -> WorstCaseStep:
    """One sharp step: ``w_k = p_k + alpha e_1 + beta_coef e_2``."""
    v = state.v
    p, u = split_against_span(v, state.basis)
    nu = float(np.linalg.norm(u))
    if mu > nu + FEASIBILITY_SLACK:
        raise InfeasibleStepError(f"mu = {mu} exceeds ||u_k|| = {nu:.6g}")
    if nu == 0.0:
        # mu == 0 here, nothing to perturb
        return WorstCaseStep(p, np.zeros_like(v), 0.0, 0.0, 0.0, True)
    mu_eff = min(mu, nu)
    e1 = u / nu
    alpha = (nu * nu - mu_eff * mu_eff) / nu
    beta_coef = (mu_eff / nu) * math.sqrt(max(nu * nu - mu_eff * mu_eff, 0.0))
    y = alpha * e1
    if beta_coef > 0.0:
        e2 = pick_orthogonal_unit(state.N, state.basis, e1)
        y = y + beta_coef * e2
    w = p + y
    _check_sharp_step(v, w, state.basis, mu_eff)
    return WorstCaseStep(w, y, alpha, beta_coef, nu, True)


def stagnation_step(state: WorstCaseState, mu: float) -> WorstCaseStep:
    """Step used once ``mu > ||u_k||``: keep the residual fixed with ``||r^P|| = mu``.

    ``w_k = p_k + y_k`` with ``y_k`` orthogonal to the current residual and to
    ``span(W_{k-1})``, so the FGMRES residual does not move.
    """
    v = state.v
    p, u = split_against_span(v, state.basis)
    nu = float(np.linalg.norm(u))
    if nu > mu:
        raise ValueError("stagnation step requested although a sharp step is feasible")
    r = state.residual
    e1 = r / np.linalg.norm(r)
    e2 = pick_orthogonal_unit(state.N, state.basis, e1)
    ynorm = math.sqrt(mu * mu - nu * nu)
    y = ynorm * e2
    return WorstCaseStep(p + y, y, 0.0, ynorm, nu, False)


def _check_sharp_step(v, w, basis, mu, tol=1e-10):
    rp = v - w
    nrp = np.linalg.norm(rp)
    scale = max(1.0, np.linalg.norm(w))
    if abs(nrp - mu) > tol * max(mu, 1e-300) and abs(nrp - mu) > 1e-15:
        raise RuntimeError(f"worst-case step: ||v - w|| = {nrp:.17g}, expected {mu}")
    if abs(np.vdot(w, rp)) > tol * scale:
        raise RuntimeError("worst-case step: inner residual not orthogonal to w")
    if basis.shape[1] and np.max(np.abs(basis.conj().T @ rp)) > tol:
        raise RuntimeError("worst-case step: inner residual not orthogonal to previous w's")


class WorstCasePreconditioner:
    """Stateful preconditioner ``z_k = A^{-1} w_k`` attaining the bound for a given ``A``.

    Must not be shared between concurrent solves; the state restarts at step 1.
    """

    def __init__(self, A, mu: float):
        if not 0 <= mu <= 0.5:
            raise ValueError("worst-case preconditioner needs 0 <= mu <= 1/2")
        A = np.asarray(A.toarray() if sp.issparse(A) else A)
        self.lu = DenseLU(A)
        self.mu = mu
        self.state = WorstCaseState(A.shape[0])
        self.steps: list[WorstCaseStep] = []

    def __call__(self, j: int, v: np.ndarray) -> InnerSolve:
        if j == 1:
            self.state.start(v)
            self.steps = []
        else:
            self.state.v = as_vector(v).copy()
        step = worst_case_step(self.state, self.mu)
        self.state.push(step.w)
        self.steps.append(step)
        return InnerSolve(z=self.lu.solve(step.w), iters=1)


def make_worst_case_preconditioner(A, mu: float) -> WorstCasePreconditioner:
    return WorstCasePreconditioner(A, mu)


@dataclass
class WSequence:
    """A synthetic worst-case run: Arnoldi vectors, ``w_j`` and predicted norms."""

    V: np.ndarray  # N x (m+1)
    W: np.ndarray  # N x m
    predicted_fg: np.ndarray  # relative, steps 0..m
    predicted_ff: np.ndarray  # relative, NaN where undefined
    sharp_steps: int
    steps: list

    @property
    def m(self) -> int:
        return self.W.shape[1]


def generate_w_sequence(b, mu: float, m: int, N: int | None = None, extend_stalled: bool = False) -> WSequence:
    """Synthesize the worst-case ``w_1..w_m`` without any matrix.

    ``v_{j+1}`` is ``w_j`` orthonormalized against ``v_1..v_j``.  With
    ``extend_stalled`` the run continues past the last sharp step with
    :func:`stagnation_step`; otherwise an infeasible step raises.  A
    breakdown (``w_j`` inside the current Krylov basis) shortens the run.
    """
    b = as_vector(b)
    if N is not None and b.shape[0] != N:
        raise ValueError(f"rhs has length {b.shape[0]}, expected {N}")
    N = b.shape[0]
    if N < m + 1:
        raise ValueError(f"need N >= m + 1 = {m + 1}, got N = {N}")
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        raise ValueError("right-hand side must be nonzero")
    V = np.zeros((N, m + 1), dtype=np.complex128)
    V[:, 0] = b / nb
    state = WorstCaseState(N)
    state.start(V[:, 0])
    ws, steps = [], []
    fg, ff = [1.0], [1.0]
    omega_prev = 0.0
    sharp = 0
    stalled = False
    for j in range(1, m + 1):
        state.v = V[:, j - 1].copy()
        try:
            if stalled:
                raise InfeasibleStepError("stalled")
            step = worst_case_step(state, mu)
        except InfeasibleStepError:
            if not extend_stalled:
                raise
            stalled = True
            step = stagnation_step(state, mu)
        if step.sharp:
            sharp += 1
            omega = mu / math.sqrt(1.0 - omega_prev * omega_prev)
            fg.append(fg[-1] * omega)
            ff.append(fg[-1] / math.sqrt(1.0 - omega * omega) if omega < 1.0 else np.nan)
            omega_prev = omega
        else:
            fg.append(fg[-1])
            ff.append(np.nan)
        state.push(step.w)
        ws.append(step.w)
        steps.append(step)
        _, q, nq = mgs_orthogonalize(step.w, V[:, :j])
        if nq <= 1e-12:
            break
        V[:, j] = q / nq
    k = len(ws)
    return WSequence(
        V=V[:, : k + 1],
        W=np.column_stack(ws) if ws else np.zeros((N, 0), dtype=np.complex128),
        predicted_fg=np.array(fg[: k + 1]),
        predicted_ff=np.array(ff[: k + 1]),
        sharp_steps=sharp,
        steps=steps,
    )


def _complete_frame(F: np.ndarray, count: int) -> np.ndarray:
    """``count`` orthonormal vectors orthogonal to ``F``, from canonical vectors in index order."""
    N = F.shape[0]
    D = np.zeros((N, count), dtype=np.complex128)
    nd = 0
    for i in range(N):
        if nd == count:
            break
        a = np.conj(F[i, :])
        c = np.conj(D[i, :nd])
        if not a.any() and not c.any():
            D[i, nd] = 1.0
            nd += 1
            continue
        e = np.zeros(N, dtype=np.complex128)
        e[i] = 1.0
        x = e - F @ a - D[:, :nd] @ c
        for _ in range(2):
            x = x - F @ (F.conj().T @ x) - D[:, :nd] @ (D[:, :nd].conj().T @ x)
        nx = np.linalg.norm(x)
        if nx > PICK_TOL:
            D[:, nd] = x / nx
            nd += 1
    if nd < count:
        raise ValueError(f"could only complete {nd} of {count} orthonormal vectors")
    return D


@dataclass
class AdversarialSystem:
    """Operator ``A x = Y (X^* x) + (x - X (X^* x))`` plus the data that built it."""

    X: sp.csc_array
    Y: sp.csc_array
    w_list: np.ndarray
    V: np.ndarray
    N: int
    m: int
    k: int
    mu: float
    sharp_steps: int
    predicted_fg: np.ndarray = field(default=None)

    def __post_init__(self):
        self._XH = self.X.conj().T.tocsr()
        self._Y = self.Y.tocsr()
        self._X = self.X.tocsr()

    def matvec(self, x) -> np.ndarray:
        x = as_vector(x)
        c = self._XH @ x
        return self._Y @ c + x - self._X @ c

    def as_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator((self.N, self.N), matvec=self.matvec, dtype=np.complex128)

    def to_dense(self, max_n: int = 500) -> np.ndarray:
        if self.N > max_n:
            raise ValueError(f"dense materialization limited to N <= {max_n} (N = {self.N})")
        X, Y = self.X.toarray(), self.Y.toarray()
        return Y @ X.conj().T + np.eye(self.N) - X @ X.conj().T

    def min_probe_gain(self, probes: int = 8, seed: int = 0) -> float:
        """Smallest ``||A x|| / ||x||`` over random probes."""
        rng = np.random.default_rng(seed)
        gains = []
        for _ in range(probes):
            x = rng.standard_normal(self.N) + 1j * rng.standard_normal(self.N)
            gains.append(np.linalg.norm(self.matvec(x)) / np.linalg.norm(x))
        return float(min(gains))

    def smallest_singular_value(self) -> float:
        """Exact ``sigma_min(A)`` via compression onto ``span([X, Y])`` (A is the identity elsewhere)."""
        import scipy.linalg as sla

        B = sla.orth(np.column_stack([self.X.toarray(), self.Y.toarray()]))
        AB = np.column_stack([self.matvec(B[:, i]) for i in range(B.shape[1])])
        s = sla.svdvals(B.conj().T @ AB)
        return float(min(s.min(), 1.0)) if B.shape[1] < self.N else float(s.min())

    def save(self, path) -> None:
        """Binary frame dump (X, Y, w_list, V and metadata) for exact reloading."""
        X, Y = self.X.tocsc(), self.Y.tocsc()
        np.savez_compressed(
            path,
            X_data=X.data, X_indices=X.indices, X_indptr=X.indptr, X_shape=X.shape,
            Y_data=Y.data, Y_indices=Y.indices, Y_indptr=Y.indptr, Y_shape=Y.shape,
            w_list=self.w_list, V=self.V,
            meta=np.array([self.N, self.m, self.k, self.sharp_steps]),
            mu=np.array(self.mu),
            predicted_fg=self.predicted_fg if self.predicted_fg is not None else np.zeros(0),
        )

    @classmethod
    def load(cls, path) -> AdversarialSystem:
        with np.load(path) as f:
            X = sp.csc_array((f["X_data"], f["X_indices"], f["X_indptr"]), shape=tuple(f["X_shape"]))
            Y = sp.csc_array((f["Y_data"], f["Y_indices"], f["Y_indptr"]), shape=tuple(f["Y_shape"]))
            N, m, k, sharp = (int(t) for t in f["meta"])
            pf = f["predicted_fg"]
            return cls(X, Y, f["w_list"], f["V"], N, m, k, float(f["mu"]), sharp,
                       pf if pf.size else None)


def _assemble(seq: WSequence, k: int, extra_pair=None) -> tuple[sp.csc_array, sp.csc_array]:
    m = seq.m
    N = seq.V.shape[0]
    D = _complete_frame(seq.V, m * (k - 1)) if k > 1 else np.zeros((N, 0), dtype=np.complex128)

    def d(j, i):  # 1-based block j, index i
        return D[:, (j - 1) * (k - 1) + (i - 1)]

    xcols = [seq.V[:, j] for j in range(m)] + [D[:, c] for c in range(D.shape[1])]
    if k == 1:
        ycols = [seq.W[:, j] for j in range(m)]
    else:
        ycols = [d(j, 1) for j in range(1, m + 1)]
        for j in range(1, m + 1):
            ycols += [d(j, i) for i in range(2, k)]
            ycols.append(seq.W[:, j - 1])
    if extra_pair is not None:
        xcols.append(extra_pair[0])
        ycols.append(extra_pair[1])
    X = sp.csc_array(np.column_stack(xcols))
    Y = sp.csc_array(np.column_stack(ycols))
    X.eliminate_zeros()
    Y.eliminate_zeros()
    return X, Y


def build_adversarial_operator(b, mu: float, m: int, k: int, N: int | None = None) -> AdversarialSystem:
    """System on which FGMRES-GMRES(k) meets the a priori bound with equality for ``m`` steps."""
    b = as_vector(b)
    N = b.shape[0] if N is None else N
    if b.shape[0] != N:
        raise ValueError(f"rhs has length {b.shape[0]}, expected {N}")
    if m < 1 or k < 1:
        raise ValueError("m and k must be positive")
    if N < m * k + 1:
        raise ValueError(f"need N >= m*k + 1 = {m * k + 1}, got N = {N}")
    if not 0 < mu <= 0.5:
        raise ValueError("sharp construction needs 0 < mu <= 1/2")
    seq = generate_w_sequence(b, mu, m)
    X, Y = _assemble(seq, k)
    system = AdversarialSystem(X, Y, seq.W, seq.V, N, seq.m, k, mu, seq.sharp_steps, seq.predicted_fg)
    _check_probes(system)
    return system


def build_stagnating_system(b, mu: float, m: int, k: int, N: int | None = None) -> AdversarialSystem:
    """Like :func:`build_adversarial_operator` for ``1/2 < mu < 1``.

    Sharp steps are taken while feasible (through the stalling index); the
    remaining steps hold the residual fixed.  Because the Hessenberg block is
    then singular, the identity completion would make ``A`` singular, so
    ``v_{m+1}`` is mapped to the unit vector of ``span(v_1..v_{m+1})``
    orthogonal to all ``w_j`` instead.
    """
    b = as_vector(b)
    N = b.shape[0] if N is None else N
    if b.shape[0] != N:
        raise ValueError(f"rhs has length {b.shape[0]}, expected {N}")
    if not 0.5 < mu < 1:
        raise ValueError("stagnating construction needs 1/2 < mu < 1")
    if N < m * k + 1:
        raise ValueError(f"need N >= m*k + 1 = {m * k + 1}, got N = {N}")
    seq = generate_w_sequence(b, mu, m, extend_stalled=True)
    coords = seq.V.conj().T @ seq.W  # (m+1) x m
    U, _, _ = np.linalg.svd(coords)
    t = seq.V @ U[:, -1]
    extra = (seq.V[:, -1], t / np.linalg.norm(t)) if seq.V.shape[1] == seq.m + 1 else None
    X, Y = _assemble(seq, k, extra)
    system = AdversarialSystem(X, Y, seq.W, seq.V, N, seq.m, k, mu, seq.sharp_steps, seq.predicted_fg)
    _check_probes(system)
    return system


def _check_probes(system: AdversarialSystem, floor: float = 1e-10) -> None:
    gain = system.min_probe_gain()
    if gain < floor:
        raise np.linalg.LinAlgError(f"constructed operator looks singular (probe gain {gain:.3e})")


def verify_sharpness(trace: SolveTrace, mu: float) -> float:
    """Largest relative gap between measured relative residuals and the a priori bound.

    Steps where the bound has stalled are skipped.
    """
    rel = trace.relative_fg
    gap = 0.0
    for j in range(1, len(rel)):
        bnd = bounds.fgmres_bound(mu, j)
        if bnd is None:
            continue
        gap = max(gap, abs(rel[j] - bnd) / bnd)
    return gap

