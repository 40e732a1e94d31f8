import numpy as np
import pytest

from flexgmres import (
    AdversarialSystem,
    GmresPreconditioner,
    InfeasibleStepError,
    SolverConfig,
    bounds,
    build_adversarial_operator,
    build_stagnating_system,
    fgmres,
    generate_w_sequence,
    inner_gmres,
    make_worst_case_preconditioner,
    verify_sharpness,
)
from flexgmres.adversarial import WorstCaseState, pick_orthogonal_unit, worst_case_step
from oracles import random_system


def e1(N):
    b = np.zeros(N)
    b[0] = 1.0
    return b


def run(system, b, m, k, **kw):
    op = system.as_operator()
    cfg = SolverConfig(max_iters=m, tol=1e-300, stop_on_stagnation=False, **kw)
    return fgmres(op, b, M=GmresPreconditioner(op, k), cfg=cfg)[1]


def test_worst_case_step_is_sharp():
    rng = np.random.default_rng(0)
    N, mu = 12, 0.35
    state = WorstCaseState(N)
    v = rng.standard_normal(N)
    state.start(v / np.linalg.norm(v))
    for _ in range(4):
        step = worst_case_step(state, mu)
        r = state.v - step.w
        assert np.linalg.norm(r) == pytest.approx(mu, rel=1e-12)
        state.push(step.w)
        assert np.linalg.norm(state.basis.conj().T @ r) < 1e-12
        # next Arnoldi-like vector: any unit vector orthogonal to the residual direction works
        state.v = state.residual / np.linalg.norm(state.residual)


def test_worst_case_step_infeasible():
    state = WorstCaseState(3)
    state.start(e1(3))
    state.push(np.array([0.9, 0.0, 0.0]))
    state.v = e1(3)
    with pytest.raises(InfeasibleStepError):
        worst_case_step(state, 0.5)


def test_pick_orthogonal_unit():
    F = np.eye(4)[:, :2]
    u = pick_orthogonal_unit(4, F)
    assert np.allclose(u, np.eye(4)[2])
    with pytest.raises(ValueError):
        pick_orthogonal_unit(2, np.eye(2))


@pytest.mark.parametrize("seed, mu", [(0, 0.5), (1, 0.3), (2, 0.1)])
def test_worst_case_preconditioner_attains_bound_for_any_matrix(seed, mu):
    rng = np.random.default_rng(seed)
    A, b = random_system(rng, 16, complex_=bool(seed % 2))
    M = make_worst_case_preconditioner(A, mu)
    _, trace, _ = fgmres(A, b, M=M, cfg=SolverConfig(max_iters=10, tol=1e-300))
    assert verify_sharpness(trace, mu) <= 1e-10
    assert np.allclose(trace.p_resnorm[1:], mu, rtol=1e-10)


def test_worst_case_preconditioner_domain():
    with pytest.raises(ValueError):
        make_worst_case_preconditioner(np.eye(3), 0.6)


def test_w_sequence_predictions_follow_bound():
    seq = generate_w_sequence(e1(30), 0.4, 10)
    assert seq.m == 10 and seq.sharp_steps == 10
    assert np.allclose(seq.predicted_fg, bounds.bound_curve(0.4, 10), rtol=1e-13)
    assert np.allclose(seq.V.conj().T @ seq.V, np.eye(11), atol=1e-13)
    # v_j - w_j is orthogonal to w_j, so ||w_j||^2 = 1 - mu^2
    assert np.allclose(np.linalg.norm(seq.W, axis=0) ** 2, 1 - 0.4**2, rtol=1e-12)


def test_w_sequence_infeasible_above_half_without_extension():
    with pytest.raises(InfeasibleStepError):
        generate_w_sequence(e1(20), 0.6, 8)
    seq = generate_w_sequence(e1(20), 0.6, 8, extend_stalled=True)
    assert seq.sharp_steps == 3
    assert np.all(seq.predicted_fg[3:] == seq.predicted_fg[3])


def test_w_sequence_dimension_check():
    with pytest.raises(ValueError):
        generate_w_sequence(e1(5), 0.3, 5)
    with pytest.raises(ValueError):
        generate_w_sequence(np.zeros(8), 0.3, 3)


def test_operator_structure():
    m, k, N, mu = 4, 3, 20, 0.5
    S = build_adversarial_operator(e1(N), mu, m, k, N)
    X = S.X.toarray()
    assert X.shape == (N, m * k)
    assert np.allclose(X.conj().T @ X, np.eye(m * k), atol=1e-13)
    A = S.to_dense()
    # identity on the orthogonal complement of span(X)
    P = np.eye(N) - X @ X.conj().T
    assert np.allclose(A @ P, P, atol=1e-12)
    # Krylov chain of block j: v_j -> d_j1 -> d_j2 -> w_j
    for j in range(m):
        v = S.V[:, j]
        d1, d2 = X[:, m + 2 * j], X[:, m + 2 * j + 1]
        assert np.allclose(A @ v, d1)
        assert np.allclose(A @ d1, d2)
        assert np.allclose(A @ d2, S.w_list[:, j])
    assert S.smallest_singular_value() > 1e-8


def test_inner_gmres_reproduces_w():
    m, k, N, mu = 5, 4, 30, 0.45
    S = build_adversarial_operator(e1(N), mu, m, k, N)
    op = S.as_operator()
    for j in range(m):
        z, rp, iters, Az = inner_gmres(op, S.V[:, j], k)
        assert np.allclose(Az, S.w_list[:, j], atol=1e-12)
        assert rp == pytest.approx(mu, rel=1e-12)


def test_k_equals_one():
    S = build_adversarial_operator(e1(8), 0.5, 5, 1, 8)
    trace = run(S, e1(8), 5, 1)
    assert verify_sharpness(trace, 0.5) <= 1e-12


def test_small_variant_sharp():
    S = build_adversarial_operator(e1(20), 0.5, 5, 3, 20)
    assert verify_sharpness(run(S, e1(20), 5, 3), 0.5) <= 1e-10


def test_quarter_final_residual_equals_bound():
    N, m, k = 101, 20, 5
    S = build_adversarial_operator(e1(N), 0.25, m, k, N)
    trace = run(S, e1(N), m, k)
    assert trace.relative_fg[-1] == pytest.approx(bounds.fgmres_bound(0.25, 20), rel=1e-8)


def test_complex_rhs():
    rng = np.random.default_rng(3)
    N = 40
    b = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    S = build_adversarial_operator(b, 0.4, 6, 4, N)
    op = S.as_operator()
    trace = fgmres(op, b, M=GmresPreconditioner(op, 4), cfg=SolverConfig(max_iters=6, tol=1e-300))[1]
    assert verify_sharpness(trace, 0.4) <= 1e-9


def test_builder_preconditions():
    with pytest.raises(ValueError):
        build_adversarial_operator(e1(10), 0.5, 5, 2, 10)
    with pytest.raises(ValueError):
        build_adversarial_operator(e1(30), 0.6, 5, 2, 30)
    with pytest.raises(ValueError):
        build_stagnating_system(e1(30), 0.4, 5, 2, 30)
    with pytest.raises(ValueError):
        build_adversarial_operator(e1(30), 0.5, 5, 2, 31)


@pytest.mark.parametrize("mu, m_star, at_stall", [(0.55, 5, 1.98e-1), (0.6, 3, 4.08e-1)])
def test_stagnating_system(mu, m_star, at_stall):
    N, m, k = 101, 12, 5
    S = build_stagnating_system(e1(N), mu, m, k, N)
    assert S.sharp_steps == m_star
    trace = run(S, e1(N), m, k)
    rel = trace.relative_fg
    assert np.allclose(rel[: m_star + 1], bounds.bound_curve(mu, m_star), rtol=1e-10)
    assert rel[m_star] == pytest.approx(at_stall, rel=1e-2)
    assert np.all(rel[m_star:] / rel[m_star] > 1 - 1e-10)
    assert max(trace.p_resnorm[1:]) <= mu * (1 + 1e-12)
    assert S.smallest_singular_value() > 1e-8


def test_stagnating_system_long_initial_phase():
    # 47 decreasing steps before the stall
    N, m, k = 120, 50, 2
    S = build_stagnating_system(e1(N), 0.501, m, k, N)
    rel = run(S, e1(N), m, k).relative_fg
    assert np.all(np.diff(rel[:48]) < 0)
    assert rel[47] == pytest.approx(6.75e-8, rel=1e-2)
    assert np.all(rel[48:] / rel[47] > 1 - 1e-6)


def test_save_load_roundtrip(tmp_path):
    S = build_adversarial_operator(e1(25), 0.5, 4, 3, 25)
    path = tmp_path / "sharp_system.npz"
    S.save(path)
    T = AdversarialSystem.load(path)
    x = np.random.default_rng(0).standard_normal(25)
    assert np.allclose(S.matvec(x), T.matvec(x), atol=0)
    assert (T.m, T.k, T.mu) == (4, 3, 0.5)
