"""Flexible GMRES and flexible FOM with variable preconditioners, sharp residual bounds and worst-case systems."""

from .adversarial import (
    AdversarialSystem,
    InfeasibleStepError,
    WorstCasePreconditioner,
    build_adversarial_operator,
    build_stagnating_system,
    generate_w_sequence,
    make_worst_case_preconditioner,
    verify_sharpness,
    worst_case_step,
)
from .bounds import (
    BoundSeries,
    asymptotic_rate,
    b_sequence,
    bound_curve,
    ffom_bound,
    fgmres_bound,
    gamma_bound_curve,
    gamma_sequence,
    local_rate,
    mu_threshold,
    omega_sequence,
    rate_report,
    stalling_index,
)
from .io import MatrixMarketError, TraceRecord, read_matrix_market, read_trace_dat, write_matrix_market, write_trace_dat
from .linalg import CsrMatrix, as_operator, csr_matvec, dense_solve, mgs_orthogonalize
from .problems import generate_convdiff
from .solver import (
    FixedPreconditioner,
    FlexibleArnoldiState,
    GmresPreconditioner,
    InnerSolve,
    PreconditionerMismatch,
    SolverConfig,
    SolveTrace,
    Status,
    ffom_step,
    fgmres,
    inner_gmres,
    make_fixed_preconditioner,
)

__version__ = "0.1.0"
