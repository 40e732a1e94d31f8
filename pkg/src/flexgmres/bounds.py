"""A priori and a posteriori residual bounds for flexible GMRES.

All bounds are relative, i.e. they bound ``||r_m|| / ||r_0||``.  The
per-step contraction factors obey

    omega_m = mu / sqrt(1 - omega_{m-1}^2),   omega_0 = 0,

and their products telescope to ``mu^m / sqrt(b_m)`` where

    b_0 = b_1 = 1,   b_m = b_{m-1} - mu^2 b_{m-2},

so that ``b_m = mu^m U_m(1/(2 mu))`` with ``U_m`` the Chebyshev polynomial of
the second kind.  Evaluating through ``b_m`` keeps every quantity in [0, 1]
and needs no complex arithmetic when ``mu > 1/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# omega values within this margin above 1 are still treated as valid
OMEGA_SLACK = 1e-14


def omega_sequence(mu: float, m: int):
    """Return ``(omega, defined)`` for steps 1..m.

    ``omega[j-1]`` is the step-j contraction factor.  An entry is undefined
    (NaN, flag False) once a previous factor reached 1, because the square
    root in the recursion is then no longer real.
    """
    omega = np.full(m, np.nan)
    defined = np.zeros(m, dtype=bool)
    prev = 0.0
    for j in range(m):
        if prev >= 1.0:
            break
        prev = mu / math.sqrt(1.0 - prev * prev)
        omega[j] = prev
        defined[j] = True
    return omega, defined


def gamma_sequence(rp_norms):
    """A posteriori contraction factors from measured preconditioner residuals.

    Returns ``(gamma, valid)``.  ``valid[j]`` holds while every factor up to
    and including step j+1 is strictly below one; measured norms above one
    are accepted and simply flagged.
    """
    rp = np.asarray(rp_norms, dtype=float)
    if np.any(rp < 0):
        raise ValueError("preconditioner residual norms must be nonnegative")
    gamma = np.full(rp.shape, np.nan)
    valid = np.zeros(rp.shape, dtype=bool)
    prev = 0.0
    ok = True
    for j, r in enumerate(rp):
        if prev >= 1.0:
            break
        prev = r / math.sqrt(1.0 - prev * prev)
        gamma[j] = prev
        ok = ok and prev < 1.0
        valid[j] = ok
    return gamma, valid


def b_sequence(mu: float, m: int) -> np.ndarray:
    """``b_0..b_m`` from the three-term recurrence."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    b = np.empty(m + 1)
    b[0] = 1.0
    if m >= 1:
        b[1] = 1.0
    mu2 = mu * mu
    for j in range(2, m + 1):
        b[j] = b[j - 1] - mu2 * b[j - 2]
    return b


def _stalled_before(mu: float, m: int) -> bool:
    omega, defined = omega_sequence(mu, m)
    return not defined.all() or bool(np.any(omega > 1.0 + OMEGA_SLACK))


def fgmres_bound(mu: float, m: int) -> float | None:
    """Relative FGMRES residual bound after ``m`` steps, ``None`` once stalled."""
    if m == 0:
        return 1.0
    if _stalled_before(mu, m):
        return None
    b = b_sequence(mu, m)
    return mu**m / math.sqrt(b[m])


def ffom_bound(mu: float, m: int) -> float | None:
    """Relative FFOM residual bound ``mu^m / sqrt(b_{m+1})``.

    Meaningful for ``mu <= 1/2``; returns ``None`` if ``b_{m+1}`` is not positive.
    """
    b = b_sequence(mu, m + 1)
    if b[m + 1] <= 0.0:
        return None
    return mu**m / math.sqrt(b[m + 1])


def fgmres_bound_explicit(mu: float, m: int) -> float:
    """Closed form of the FGMRES bound via the roots ``r_pm`` (``mu < 1/2`` only)."""
    if not 0 < mu < 0.5:
        raise ValueError("closed form needs 0 < mu < 1/2 (distinct real roots)")
    s = math.sqrt(1.0 - 4.0 * mu * mu)
    rp, rm = (1.0 + s) / 2.0, (1.0 - s) / 2.0
    return mu**m * math.sqrt(s / (rp ** (m + 1) - rm ** (m + 1)))


def ffom_bound_explicit(mu: float, m: int) -> float:
    if not 0 < mu < 0.5:
        raise ValueError("closed form needs 0 < mu < 1/2 (distinct real roots)")
    s = math.sqrt(1.0 - 4.0 * mu * mu)
    rp, rm = (1.0 + s) / 2.0, (1.0 - s) / 2.0
    return mu**m * math.sqrt(s / (rp ** (m + 2) - rm ** (m + 2)))


def local_rate(mu: float, m: int) -> float:
    """``omega_m`` written as a ratio of consecutive ``b`` values."""
    if m < 1:
        raise ValueError("m must be at least 1")
    b = b_sequence(mu, m)
    return math.sqrt(mu * mu * b[m - 1] / b[m])


def asymptotic_rate(mu: float) -> float:
    """Limit of ``omega_m``; equals 1 (stagnation) for ``mu > 1/2``."""
    if not 0 < mu < 1:
        raise ValueError("mu must lie in (0, 1)")
    if mu > 0.5:
        return 1.0
    return math.sin(0.5 * math.asin(2.0 * mu))


def mu_threshold(m: int) -> float:
    """Largest ``mu`` for which ``omega_j <= 1`` for all ``j <= m``."""
    if m < 1:
        raise ValueError("m must be at least 1")
    return 1.0 / (2.0 * math.cos(math.pi / (m + 2)))


def stalling_index(mu: float, max_steps: int = 100_000) -> float | int:
    """Last step after which the a priori bound stops decreasing.

    Runs the omega recursion and returns the largest ``m`` with
    ``omega_j <= 1`` for all ``j <= m``; ``math.inf`` for ``mu <= 1/2``.
    """
    if not 0 < mu < 1:
        raise ValueError("mu must lie in (0, 1)")
    if mu <= 0.5:
        return math.inf
    prev = 0.0
    for j in range(1, max_steps + 1):
        prev = mu / math.sqrt(1.0 - prev * prev)
        if prev > 1.0 + OMEGA_SLACK:
            return j - 1
        if prev >= 1.0:
            return j
    raise RuntimeError(f"omega recursion did not exceed 1 within {max_steps} steps")


def stalling_index_from_threshold(mu: float) -> float | int:
    """Same index obtained by inverting ``mu <= mu_threshold(m)``."""
    if mu <= 0.5:
        return math.inf
    # mu_threshold decreases to 1/2, so search upwards
    m = 1
    while mu <= mu_threshold(m + 1):
        m += 1
    return m


def bound_curve(mu: float, m: int) -> np.ndarray:
    """Bound values for steps 0..m, held at the last valid value once stalled.

    Holding the value is still a valid bound because FGMRES residual norms
    never increase.
    """
    out = np.empty(m + 1)
    out[0] = 1.0
    b = b_sequence(mu, max(m, 1))
    omega, defined = omega_sequence(mu, m)
    last = 1.0
    stalled = False
    for j in range(1, m + 1):
        if not stalled and defined[j - 1] and omega[j - 1] <= 1.0 + OMEGA_SLACK:
            last = mu**j / math.sqrt(b[j])
        else:
            stalled = True
        out[j] = last
    return out


def gamma_bound_curve(rp_norms) -> np.ndarray:
    """Cumulative a posteriori bound ``prod gamma_j`` (NaN where invalid)."""
    gamma, valid = gamma_sequence(rp_norms)
    out = np.empty(len(gamma) + 1)
    out[0] = 1.0
    acc = 1.0
    for j, (g, ok) in enumerate(zip(gamma, valid)):
        acc = acc * g if ok else np.nan
        out[j + 1] = acc
    return out


@dataclass
class BoundSeries:
    """Everything the bounds module knows about one ``mu`` up to step ``m``."""

    mu: float
    m: int
    omegas: np.ndarray = field(init=False)
    b_seq: np.ndarray = field(init=False)
    fg_bounds: np.ndarray = field(init=False)
    ff_bounds: np.ndarray = field(init=False)
    stall_index: float | int = field(init=False)

    def __post_init__(self):
        self.omegas, _ = omega_sequence(self.mu, self.m)
        self.b_seq = b_sequence(self.mu, self.m + 1)
        self.fg_bounds = np.array(
            [np.nan if (v := fgmres_bound(self.mu, j)) is None else v for j in range(self.m + 1)]
        )
        self.ff_bounds = np.array(
            [np.nan if (v := ffom_bound(self.mu, j)) is None else v for j in range(self.m + 1)]
        )
        self.stall_index = stalling_index(self.mu)


@dataclass(frozen=True)
class RateReport:
    mu: float
    phase1_rate: float
    phase2_rate: float
    stall_index: float | int
    bound_at_stall: float


def rate_report(mu: float) -> RateReport:
    m_star = stalling_index(mu)
    at_stall = 0.0 if math.isinf(m_star) else fgmres_bound(mu, int(m_star))
    return RateReport(mu, mu, asymptotic_rate(mu), m_star, at_stall)
