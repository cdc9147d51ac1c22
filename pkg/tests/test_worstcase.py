import numpy as np
import pytest
import quadprog
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_dsm.errors import DegenerateDirection, DimensionMismatch, MaxIterationsExceeded
from robust_dsm.oracles import slot_error_oracle
from robust_dsm.worstcase import (SlotErrorProblem, contraction_constant, fixed_point_map,
                                  halfspace_contains, inner_hessian_eigenvalues, inner_payoff,
                                  kkt_residual, lambda_from_delta, min_coupled_norm,
                                  project_halfspace, solve_errors, solve_slot_errors,
                                  stationarity_residual, strong_monotonicity_threshold)

SQ2 = np.sqrt(2.0)


def test_halfspace_examples():
    assert halfspace_contains([0.0, 0.0], SlotErrorProblem([3.0, 3.0], 1.0))
    assert not halfspace_contains([0.0, 0.0], SlotErrorProblem([-3.0, -3.0], 1.0))
    # boundary 1'x = 6 + sqrt(2) split evenly, plus 1e-4
    assert halfspace_contains([3.7072, 3.7072], SlotErrorProblem([-3.0, -3.0], 1.0))
    assert not halfspace_contains([3.7070, 3.7070], SlotErrorProblem([-3.0, -3.0], 1.0))
    assert not halfspace_contains([-0.1, 10.0], SlotErrorProblem([3.0, 3.0], 1.0))


def test_projection_examples():
    prob = SlotErrorProblem([-3.0, -3.0], 1.0)
    y = project_halfspace([0.0, 0.0], prob)
    np.testing.assert_allclose(y, [3.70711, 3.70711], atol=1e-5)
    # lies on the hyperplane 1'y + 1'a/(D-1) - sqrt(alpha D) = 0
    assert y.sum() + prob.offset == pytest.approx(0.0, abs=1e-9)
    member = np.array([4.0, 5.0])
    np.testing.assert_array_equal(project_halfspace(member, prob), member)


def test_projection_matches_numerical_distance_minimizer():
    # minimize ||y - x|| on the hyperplane: closed form is the orthogonal shift along 1
    prob = SlotErrorProblem([-3.0, -3.0], 1.0)
    x = np.zeros(2)
    t = np.linspace(-10, 10, 200001)
    # parameterize the hyperplane y = (6 + sqrt 2)/2 * 1 + t * (1, -1)/sqrt 2
    base = (6 + SQ2) / 2
    pts = np.stack([base + t / SQ2, base - t / SQ2])
    best = pts[:, np.argmin(np.linalg.norm(pts - x[:, None], axis=0))]
    np.testing.assert_allclose(project_halfspace(x, prob), best, atol=1e-4)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_projection_idempotent(D, seed):
    rng = np.random.default_rng(seed)
    prob = SlotErrorProblem(rng.uniform(-5, 5, D), rng.uniform(0.1, 4.0))
    x = rng.uniform(-3, 3, D)
    once = project_halfspace(x, prob)
    np.testing.assert_allclose(project_halfspace(once, prob), once, atol=1e-12)


def test_symmetric_map_example():
    prob = SlotErrorProblem([3.0] * 4, 1.0)
    np.testing.assert_allclose(fixed_point_map(np.full(4, 0.2), prob), 0.5, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_prenormalized_norm_is_sqrt_alpha(D, seed):
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.01, 3.0)
    prob = SlotErrorProblem(rng.uniform(1, 5, D), alpha)
    y = fixed_point_map(rng.uniform(0, 1, D), prob, unprojected=True)
    assert np.linalg.norm(y) == pytest.approx(np.sqrt(alpha), abs=1e-12)


def test_degenerate_direction():
    prob = SlotErrorProblem([-1.0, -1.0], 1.0)
    with pytest.raises(DegenerateDirection):
        fixed_point_map(np.array([1.0, 1.0]), prob)


def _bisection_fixed_point(a, alpha):
    """Angle theta in [0, pi/2] with atan2 of the coupled direction equal to theta."""
    def g(th):
        d = np.sqrt(alpha) * np.array([np.cos(th), np.sin(th)])
        v = np.asarray(a) + d[::-1]
        return np.arctan2(v[1], v[0]) - th

    lo, hi = 0.0, np.pi / 2
    assert g(lo) > 0 > g(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if g(mid) > 0 else (lo, mid)
    th = 0.5 * (lo + hi)
    return np.sqrt(alpha) * np.array([np.cos(th), np.sin(th)])


def test_two_user_iteration_converges_to_stationary_point():
    prob = SlotErrorProblem([5.0, 4.0], 0.25)
    sol = solve_slot_errors(prob, 1.0, 0.0, delta0=[0.3536, 0.3536])
    assert stationarity_residual(sol.delta, prob) <= 1e-8
    np.testing.assert_allclose(sol.delta, _bisection_fixed_point([5.0, 4.0], 0.25), atol=1e-8)


def test_two_user_fixed_point_matches_angular_grid():
    prob = SlotErrorProblem([5.0, 4.0], 0.25)
    sol = solve_slot_errors(prob, 1.0, 0.0)
    np.testing.assert_allclose(sol.delta, slot_error_oracle([5.0, 4.0], 0.25), atol=1e-3)


def test_symmetric_instance_one_iteration():
    sol = solve_slot_errors(SlotErrorProblem([7.0] * 5, 2.0), 0.5, 0.001)
    assert sol.iterations == 1
    np.testing.assert_allclose(sol.delta, np.sqrt(2.0 / 5), atol=1e-15)


def test_lambda_example():
    # |D|=4, K=1, beta=0.001, l_n=1, L=4, delta_n=0.5
    prob = SlotErrorProblem([5.0] * 4, 1.0)
    delta = np.full(4, 0.5)
    lam = lambda_from_delta(delta, prob, 1.0, 0.001)
    assert lam == pytest.approx(7.501, abs=1e-12)
    assert kkt_residual(delta, prob, 1.0, 0.001, lam) == pytest.approx(0.0, abs=1e-12)
    # -A + lam Q is positive semidefinite with A = K + beta, Q = 1
    assert lam - (1.0 + 0.001) >= 0


def test_stationarity_residual_examples():
    prob = SlotErrorProblem([3.0] * 4, 1.0)
    assert stationarity_residual(np.full(4, 0.5), prob) == pytest.approx(0.0, abs=1e-12)
    a = np.array([1.0, 2.0, 4.0])
    prob = SlotErrorProblem(a, 0.5)
    expected = np.sqrt(0.5) * np.abs(a).max() / np.linalg.norm(a)
    assert stationarity_residual(np.zeros(3), prob) == pytest.approx(expected, rel=1e-14)


def _random_problem(rng, D, big=True):
    alpha = rng.uniform(0.05, 1.0)
    scale = 10 * np.sqrt(alpha) * D if big else 1.0
    return SlotErrorProblem(rng.uniform(scale, 3 * scale, D), alpha)


def _sample_in_x(prob, rng, count):
    D = prob.user_count
    x = rng.uniform(0, 2 * np.sqrt(prob.alpha), (count, D))
    short = -(x.sum(axis=1) + prob.offset)
    x += np.maximum(short, 0)[:, None] / D + 1e-12
    return x


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_residual_decreases_and_contraction_holds(D, seed):
    rng = np.random.default_rng(seed)
    prob = _random_problem(rng, D)
    q = contraction_constant(prob)
    assert q < 1
    start = np.full(D, np.sqrt(prob.alpha / D))
    sol = solve_slot_errors(prob, 0.1, 0.001)
    assert stationarity_residual(sol.delta, prob) < stationarity_residual(start, prob) + 1e-15
    # two starts converge to the same point
    other = solve_slot_errors(prob, 0.1, 0.001, delta0=_sample_in_x(prob, rng, 1)[0])
    assert np.abs(other.delta - sol.delta).max() <= 1e-7


def test_large_load_gives_contraction():
    prob = SlotErrorProblem([10 * 1.0 * 3] * 3, 1.0)
    assert contraction_constant(prob) < 1


def test_q_scales_with_sqrt_alpha():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = rng.uniform(1.0, 5.0, 4)
        alpha = rng.uniform(0.05, 1.0)
        q1 = contraction_constant(SlotErrorProblem(a, alpha))
        q4 = contraction_constant(SlotErrorProblem(a, alpha / 4))
        assert q4 <= q1 / 1.9


def _gamma_by_qp(prob):
    D = prob.user_count
    A = np.ones((D, D)) - np.eye(D)
    G = A.T @ A
    lin = -(A.T @ prob.a)  # quadprog minimizes x.G.x/2 - lin.x
    C = np.hstack([np.eye(D), np.ones((D, 1))])
    b = np.concatenate([np.zeros(D), [-prob.offset]])
    x = quadprog.solve_qp(G, lin, C, b, 0)[0]
    return float(np.linalg.norm(prob.a + A @ x))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1), st.booleans())
def test_gamma_matches_direct_qp(D, seed, big):
    rng = np.random.default_rng(seed)
    prob = _random_problem(rng, D, big)
    assert min_coupled_norm(prob) == pytest.approx(_gamma_by_qp(prob), rel=1e-7, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_empirical_lipschitz_below_q(seed):
    rng = np.random.default_rng(seed)
    prob = _random_problem(rng, 3 + seed)
    q = contraction_constant(prob)
    x1, x2 = _sample_in_x(prob, rng, 1000), _sample_in_x(prob, rng, 1000)
    for u, v in zip(x1, x2):
        lhs = np.linalg.norm(fixed_point_map(u, prob) - fixed_point_map(v, prob))
        assert lhs <= q * np.linalg.norm(u - v) + 1e-12


def test_batched_map_matches_columns():
    rng = np.random.default_rng(3)
    prob = _random_problem(rng, 5, big=False)
    x = _sample_in_x(prob, rng, 30).T
    batch = fixed_point_map(x, prob)
    assert batch.shape == x.shape
    for j in range(x.shape[1]):
        np.testing.assert_array_equal(batch[:, j], fixed_point_map(x[:, j], prob))
    with pytest.raises(DimensionMismatch):
        fixed_point_map(np.ones((4, 3)), prob)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_self_map(D, seed):
    rng = np.random.default_rng(seed)
    prob = SlotErrorProblem(rng.uniform(0.5, 5.0, D), rng.uniform(0.05, 1.0))
    for x in _sample_in_x(prob, rng, 20):
        y = fixed_point_map(x, prob)
        assert y.sum() + prob.offset >= -1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_solution_certificates(D, seed):
    rng = np.random.default_rng(seed)
    prob = SlotErrorProblem(rng.uniform(0.5, 5.0, D), rng.uniform(0.05, 1.0))
    k, beta = rng.uniform(0.01, 1.0), 0.001
    sol = solve_slot_errors(prob, k, beta, max_iter=2000)
    assert np.sum(sol.delta**2) == pytest.approx(prob.alpha, rel=1e-6)
    assert sol.lam >= k + beta
    assert halfspace_contains(sol.delta, prob, tol=1e-9)
    assert kkt_residual(sol.delta, prob, k, beta, sol.lam) <= 1e-6
    assert sol.lam == pytest.approx(lambda_from_delta(sol.delta, prob, k, beta), rel=1e-12)


def test_no_unilateral_gain_in_penalized_inner_game():
    rng = np.random.default_rng(4)
    l = rng.uniform(0.5, 2.0, 3)
    L = l.sum()
    prob = SlotErrorProblem(L + l, 0.3)
    k, beta = 0.5, 0.001
    sol = solve_slot_errors(prob, k, beta)
    for n in range(3):
        base = inner_payoff(n, sol.delta, prob, l[n], L, k, beta, sol.lam)
        for t in rng.normal(0, 0.2, 100):
            moved = sol.delta.copy()
            moved[n] += t
            assert inner_payoff(n, moved, prob, l[n], L, k, beta, sol.lam) <= base + 1e-12


def test_hessian_eigenvalues_and_threshold():
    k, beta, D = 0.7, 0.01, 5
    lam = strong_monotonicity_threshold(k, beta, D)
    big, small = inner_hessian_eigenvalues(k, beta, lam, D)
    assert big == pytest.approx(0.0, abs=1e-14)
    dense = np.linalg.eigvalsh((k + 2 * beta - 2 * lam) * np.eye(D) + k * np.ones((D, D)))
    np.testing.assert_allclose(sorted([big, small]), [dense.min(), dense.max()], atol=1e-12)
    big, small = inner_hessian_eigenvalues(k, beta, lam + 0.1, D)
    assert max(big, small) < 0


def test_vectorized_solve_matches_per_slot():
    rng = np.random.default_rng(2)
    loads = rng.uniform(0.2, 1.0, (5, 3))
    alpha = np.array([0.1, 0.2, 0.05])
    k = np.array([0.3, 0.4, 0.5])
    ws = solve_errors(loads, alpha, k, 0.001)
    for h in range(3):
        sol = solve_slot_errors(SlotErrorProblem.from_loads(loads, h, alpha[h]), k[h], 0.001)
        np.testing.assert_allclose(ws.delta[:, h], sol.delta, atol=1e-8)
        assert ws.lambdas[h] == pytest.approx(sol.lam, rel=1e-8)


def test_single_user_special_case():
    ws = solve_errors(np.array([[2.0, 1.0]]), np.array([0.25, 1.0]), np.array([1.0, 1.0]), 0.0)
    np.testing.assert_allclose(ws.delta, [[0.5, 1.0]])


def test_max_iterations_reports_residual():
    prob = SlotErrorProblem([5.0, 4.0, 0.3], 2.0)
    with pytest.raises(MaxIterationsExceeded) as exc:
        solve_slot_errors(prob, 1.0, 0.0, tol=1e-300, max_iter=3)
    assert exc.value.iterations == 3 and exc.value.residual > 0
