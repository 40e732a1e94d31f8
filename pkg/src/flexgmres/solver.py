"""Flexible GMRES / flexible FOM with arbitrary inner preconditioners."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linalg import (
    GivensQR,
    as_operator,
    as_vector,
    hessenberg_lsq,
    hessenberg_square_solve,
    mgs_orthogonalize,
)

log = logging.getLogger(__name__)


class PreconditionerMismatch(RuntimeError):
    """A preconditioner reported a residual norm that does not match the verified one."""


@dataclass
class InnerSolve:
    """Result of one preconditioner application ``z ~ A^{-1} v``.

    ``Az`` and ``resnorm`` are optional extras a preconditioner may already
    know; ``iters`` is the number of inner iterations spent.
    """

    z: np.ndarray
    Az: np.ndarray | None = None
    resnorm: float | None = None
    iters: int = 0


# A preconditioner is any callable (j, v_j) -> InnerSolve | ndarray.
Preconditioner = Callable[[int, np.ndarray], "InnerSolve | np.ndarray"]


class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    HAPPY_BREAKDOWN = "happy_breakdown"
    FFOM_SINGULAR_NOTED = "ffom_singular_noted"
    STAGNATION_DETECTED = "stagnation_detected"


@dataclass
class SolverConfig:
    max_iters: int = 50
    tol: float = 1e-10
    breakdown_tol: float = 1e-12
    verify_preconditioner: bool = True
    compute_ffom: bool = True
    stop_on_stagnation: bool = True
    stagnation_ratio: float = 1.0 - 1e-12

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tol <= 0 or self.breakdown_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveTrace:
    """Per-step residual history; index 0 is the initial guess.

    ``ff_resnorm`` holds NaN where the FFOM iterate is undefined and
    ``p_resnorm[0]`` is NaN (no preconditioner at step 0).
    """

    fg_resnorm: list = field(default_factory=list)
    ff_resnorm: list = field(default_factory=list)
    p_resnorm: list = field(default_factory=list)
    inner_iters: list = field(default_factory=list)
    status: Status = Status.MAX_ITERS
    ffom_singular_steps: list = field(default_factory=list)
    stagnation_steps: list = field(default_factory=list)
    true_resnorm: float = float("nan")

    @property
    def steps(self) -> int:
        return len(self.fg_resnorm) - 1

    @property
    def relative_fg(self) -> np.ndarray:
        fg = np.asarray(self.fg_resnorm)
        return fg / fg[0] if fg[0] > 0 else fg

    @property
    def relative_ff(self) -> np.ndarray:
        ff = np.asarray(self.ff_resnorm, dtype=float)
        return ff / self.fg_resnorm[0] if self.fg_resnorm[0] > 0 else ff


@dataclass
class FlexibleArnoldiState:
    """Bases ``V`` (N x (j+1)), ``Z`` (N x j) and Hessenberg ``H`` ((j+1) x j) after j steps."""

    V: np.ndarray
    Z: np.ndarray
    H: np.ndarray
    beta: float
    x0: np.ndarray

    @property
    def steps(self) -> int:
        return self.Z.shape[1]

    def fgmres_iterate(self, j: int | None = None) -> np.ndarray:
        j = self.steps if j is None else j
        if j == 0:
            return self.x0.copy()
        y, _, singular = hessenberg_lsq(self.H[: j + 1, :j], self.beta)
        if singular:
            raise np.linalg.LinAlgError(f"least-squares problem at step {j} is rank deficient")
        return self.x0 + self.Z[:, :j] @ y

    def ffom_iterate(self, j: int | None = None) -> np.ndarray | None:
        return ffom_step(self, j)


def ffom_step(state: FlexibleArnoldiState, j: int | None = None) -> np.ndarray | None:
    """FFOM iterate ``x_0 + Z_j H_j^{-1} beta e_1``, or ``None`` if ``H_j`` is singular."""
    j = state.steps if j is None else j
    if j == 0:
        return state.x0.copy()
    y = hessenberg_square_solve(state.H[: j + 1, :j], state.beta)
    if y is None:
        return None
    return state.x0 + state.Z[:, :j] @ y


def _unpack(out) -> InnerSolve:
    if isinstance(out, InnerSolve):
        return out
    return InnerSolve(z=as_vector(out))


def fgmres(A, b, x0=None, M: Preconditioner | None = None, cfg: SolverConfig | None = None):
    """Flexible GMRES with simultaneous FFOM residual tracking.

    ``M(j, v_j)`` is called once per outer step with the unit Arnoldi vector
    and returns an approximate solution of ``A z = v_j``.  With ``M=None``
    the identity is used, which reduces to unpreconditioned GMRES.

    Returns ``(x, trace, state)``.
    """
    cfg = cfg or SolverConfig()
    op = as_operator(A)
    b = as_vector(b)
    N = b.shape[0]
    if op.shape != (N, N):
        raise ValueError(f"operator shape {op.shape} does not match rhs length {N}")
    x0 = np.zeros(N, dtype=np.complex128) if x0 is None else as_vector(x0).copy()
    if x0.shape != (N,):
        raise ValueError("initial guess has the wrong length")
    if M is None:
        M = lambda j, v: InnerSolve(z=v.copy(), iters=0)  # noqa: E731

    r0 = b - op.matvec(x0)
    beta = float(np.linalg.norm(r0))
    m = cfg.max_iters
    V = np.zeros((N, m + 1), dtype=np.complex128)
    Z = np.zeros((N, m), dtype=np.complex128)
    H = np.zeros((m + 1, m), dtype=np.complex128)
    trace = SolveTrace(fg_resnorm=[beta], ff_resnorm=[beta], p_resnorm=[np.nan], inner_iters=[0])

    def finish(j: int):
        state = FlexibleArnoldiState(V[:, : j + 1], Z[:, :j], H[: j + 1, :j], beta, x0)
        try:
            x = state.fgmres_iterate(j)
        except np.linalg.LinAlgError:
            # singular triangle only after a non-converged breakdown; the
            # previous iterate has the same residual norm
            x = state.fgmres_iterate(j - 1)
        trace.true_resnorm = float(np.linalg.norm(b - op.matvec(x)))
        return x, trace, state

    if beta == 0.0:
        trace.status = Status.CONVERGED
        return finish(0)

    V[:, 0] = r0 / beta
    qr = GivensQR(beta, m)
    stagnant_run = 0

    for j in range(1, m + 1):
        v = V[:, j - 1]
        inner = _unpack(M(j, v))
        z = as_vector(inner.z)
        if z.shape != (N,):
            raise ValueError(f"preconditioner returned a vector of shape {z.shape}")
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"preconditioner returned non-finite values at step {j}")

        if cfg.verify_preconditioner or inner.Az is None:
            w = as_vector(op.matvec(z))
        else:
            w = as_vector(inner.Az)
        rp = float(np.linalg.norm(v - w))
        if cfg.verify_preconditioner and inner.resnorm is not None:
            if abs(inner.resnorm - rp) > 1e-10 * rp + 1e-13:
                raise PreconditionerMismatch(
                    f"step {j}: reported ||r^P|| = {inner.resnorm:.3e}, verified {rp:.3e}"
                )

        Z[:, j - 1] = z
        h, w_perp, h_next = mgs_orthogonalize(w, V[:, :j])
        H[:j, j - 1] = h
        H[j, j - 1] = h_next
        fg = qr.add_column(H[: j + 1, j - 1])

        ff = np.nan
        if cfg.compute_ffom:
            y_ff = qr.square_solution()
            if y_ff is None:
                trace.ffom_singular_steps.append(j)
            else:
                ff = h_next * abs(y_ff[-1])

        trace.fg_resnorm.append(fg)
        trace.ff_resnorm.append(ff)
        trace.p_resnorm.append(rp)
        trace.inner_iters.append(int(inner.iters))

        if fg <= cfg.tol * beta:
            trace.status = Status.CONVERGED
            return finish(j)
        if h_next <= cfg.breakdown_tol * beta:
            # Arnoldi breakdown without convergence: A z_j fell into span(V_j)
            trace.status = Status.HAPPY_BREAKDOWN
            log.warning("breakdown at step %d with relative residual %.3e", j, fg / beta)
            return finish(j)
        V[:, j] = w_perp / h_next

        prev = trace.fg_resnorm[-2]
        stagnant_run = stagnant_run + 1 if fg > cfg.stagnation_ratio * prev else 0
        if stagnant_run >= 2:
            if not trace.stagnation_steps:
                log.info("stagnation detected at step %d", j)
            trace.stagnation_steps.append(j)
            if cfg.stop_on_stagnation:
                trace.status = Status.STAGNATION_DETECTED
                return finish(j)

    if trace.stagnation_steps:
        trace.status = Status.STAGNATION_DETECTED
    elif trace.ffom_singular_steps:
        trace.status = Status.FFOM_SINGULAR_NOTED
    else:
        trace.status = Status.MAX_ITERS
    return finish(m)


def inner_gmres(A, v, k: int, mu_target: float | None = None, breakdown_tol: float = 1e-14):
    """Plain GMRES from a zero initial guess for ``A z = v``.

    Runs exactly ``k`` iterations, or stops at the first iteration whose
    relative residual is at most ``mu_target``.  Returns
    ``(z, rp_norm, iters, Az)`` where ``rp_norm = ||v - A z||`` is computed
    explicitly.  A breakdown with nonzero residual returns the best iterate
    found so far.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    op = as_operator(A)
    v = as_vector(v)
    nv = float(np.linalg.norm(v))
    N = v.shape[0]
    if nv == 0.0:
        zero = np.zeros(N, dtype=np.complex128)
        return zero, 0.0, 0, zero
    Q = np.zeros((N, k + 1), dtype=np.complex128)
    Q[:, 0] = v / nv
    qr = GivensQR(nv, k)
    Hk = np.zeros((k + 1, k), dtype=np.complex128)
    iters = 0
    for i in range(k):
        w = as_vector(op.matvec(Q[:, i]))
        h, w_perp, h_next = mgs_orthogonalize(w, Q[:, : i + 1])
        Hk[: i + 1, i] = h
        Hk[i + 1, i] = h_next
        res = qr.add_column(Hk[: i + 2, i])
        iters = i + 1
        if h_next <= breakdown_tol * nv:
            break
        Q[:, i + 1] = w_perp / h_next
        if mu_target is not None and res <= mu_target * nv:
            break
    y = qr.lsq_solution(iters)
    if y is None:
        # rank-deficient after a breakdown: drop the last direction
        iters -= 1
        y = qr.lsq_solution(iters)
    z = Q[:, :iters] @ y
    Az = as_vector(op.matvec(z))
    return z, float(np.linalg.norm(v - Az)), iters, Az


class GmresPreconditioner:
    """Inner GMRES(k) preconditioner, optionally stopping at a relative residual ``mu_target``."""

    def __init__(self, A, k: int, mu_target: float | None = None):
        self.op = as_operator(A)
        self.k = k
        self.mu_target = mu_target

    def __call__(self, j: int, v: np.ndarray) -> InnerSolve:
        z, rp, iters, Az = inner_gmres(self.op, v, self.k, self.mu_target)
        return InnerSolve(z=z, Az=Az, resnorm=rp, iters=iters)


class FixedPreconditioner:
    """Apply the same linear operator ``M`` at every step (``z_j = M v_j``)."""

    def __init__(self, M):
        self.op = as_operator(M)

    def __call__(self, j: int, v: np.ndarray) -> InnerSolve:
        return InnerSolve(z=as_vector(self.op.matvec(v)), iters=1)


def make_fixed_preconditioner(M) -> FixedPreconditioner:
    return FixedPreconditioner(M)
