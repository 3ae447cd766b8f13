import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decopt import sdp


def lyapunov_problem(A, tau):
    """F(P) = A^T P A - tau^2 P."""
    n = A.shape[0]
    basis = sdp.svec_basis(n)
    Fs = np.einsum("ai,kab,bj->kij", A, basis, A) - tau ** 2 * basis
    return sdp.LmiFeasibilityProblem(np.zeros((n, n)), Fs, n, 0)


def matrix_with_radius(rng, n, radius):
    A = rng.normal(size=(n, n))
    return A * radius / np.abs(np.linalg.eigvals(A)).max()


def power_iteration(S, iters=5000):
    shift = np.abs(S).sum(1).max()
    M = S + shift * np.eye(len(S))
    x = np.ones(len(S)) / np.sqrt(len(S))
    for _ in range(iters):
        x = M @ x
        x /= np.linalg.norm(x)
    return x @ S @ x


def test_max_eigenvalue_examples():
    assert sdp.max_eigenvalue(np.diag([1.0, 2.0, 3.0])) == pytest.approx(3.0)
    assert sdp.max_eigenvalue([[0.0, 1.0], [1.0, 0.0]]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        sdp.max_eigenvalue([[np.inf, 0], [0, 1]])


def test_max_eigenvalue_matches_power_iteration():
    rng = np.random.default_rng(0)
    for n in (3, 8, 20):
        S = rng.normal(size=(n, n))
        S = S + S.T
        assert sdp.max_eigenvalue(S) == pytest.approx(power_iteration(S), abs=1e-8)


def test_svec_round_trip():
    rng = np.random.default_rng(1)
    S = rng.normal(size=(4, 4))
    S = S + S.T
    assert np.allclose(sdp.smat(sdp.svec(S), 4), S)
    x = sdp.svec(S)
    assert np.allclose(np.tensordot(x, sdp.svec_basis(4), axes=1), S)


def test_scalar_lyapunov():
    assert sdp.solve(lyapunov_problem(np.array([[0.5]]), 0.9)).feasible
    res = sdp.solve(lyapunov_problem(np.array([[1.0]]), 0.9))
    assert res.status == "infeasible"


def test_random_lyapunov_classification():
    rng = np.random.default_rng(2024)
    for k, radius in enumerate(np.linspace(0.3, 1.5, 20)):
        A = matrix_with_radius(rng, 2 + k % 5, radius)
        for tau in (0.7, 1.0):
            res = sdp.solve(lyapunov_problem(A, tau))
            assert res.feasible == (radius < tau), (radius, tau, res.status)
            if res.feasible:
                F = A.T @ res.P @ A - tau ** 2 * res.P
                assert np.linalg.eigvalsh(F).max() <= -sdp.MARGIN_TOL
                assert np.linalg.eigvalsh(res.P).min() >= sdp.EPS_P


def test_shape_validation():
    with pytest.raises(ValueError):
        sdp.LmiFeasibilityProblem(np.zeros((2, 2)), np.zeros((2, 2, 2)), 2, 0)


def test_solver_failure_is_not_infeasible():
    res = sdp.solve(lyapunov_problem(np.diag([0.5, 0.2]), 0.9), max_newton=1)
    assert res.status == "failed"


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(1e-3, 1e3))
def test_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    A = matrix_with_radius(rng, 3, rng.choice([0.5, 1.2]))
    prob = lyapunov_problem(A, 0.8)
    assert sdp.solve(prob).feasible == sdp.solve(prob.scaled(c)).feasible


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_affinity(seed):
    rng = np.random.default_rng(seed)
    n, m = 3, 5
    N = n * (n + 1) // 2 + 2
    F0 = rng.normal(size=(m, m))
    Fs = rng.normal(size=(N, m, m))
    F0, Fs = F0 + F0.T, Fs + np.swapaxes(Fs, 1, 2)
    prob = sdp.LmiFeasibilityProblem(F0, Fs, n, 2)
    x, y = rng.normal(size=(2, N))
    a, b = rng.normal(size=2)
    lhs = prob.evaluate(a * x + b * y)
    rhs = a * prob.evaluate(x) + b * prob.evaluate(y) + (1 - a - b) * F0
    assert np.allclose(lhs, rhs)
    assert np.allclose(prob.evaluate(x), prob.evaluate(x).T)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_margin_nesting(seed):
    rng = np.random.default_rng(seed)
    A = matrix_with_radius(rng, 3, 0.5)
    prob = lyapunov_problem(A, 0.9)
    full = sdp.solve(prob, early_exit=False)
    m1 = full.slack / 2
    assert sdp.solve(prob, margin_tol=m1).feasible
    assert sdp.solve(prob, margin_tol=m1 / 10).feasible
