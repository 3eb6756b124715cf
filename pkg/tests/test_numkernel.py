import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cpcontrol.errors import NoConvergence, UnstableF
from cpcontrol.numkernel import (as_matrix, expm, is_schur_stable, op_norm, project_opnorm_ball,
                                 riccati_step, solve_discrete_are, solve_discrete_lyapunov,
                                 solve_lyapunov_pair, spectral_radius, spectrum)

from .conftest import random_spd, random_stable_system

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_op_norm_examples():
    assert op_norm(np.eye(4)) == pytest.approx(1.0)
    assert op_norm(np.diag([3.0, -4.0])) == pytest.approx(4.0)
    assert op_norm([[0.0, 2.0], [0.0, 0.0]]) == pytest.approx(2.0)


def test_op_norm_matches_sampled_sup(rng):
    M = rng.standard_normal((3, 5))
    v = rng.standard_normal((5, 1000))
    v /= np.linalg.norm(v, axis=0)
    sampled = np.max(np.linalg.norm(M @ v, axis=0))
    assert sampled <= op_norm(M) + 1e-12
    # the maximizing direction is the top right singular vector
    _, _, Vt = np.linalg.svd(M)
    assert np.linalg.norm(M @ Vt[0]) == pytest.approx(op_norm(M), rel=1e-12)


def test_spectral_radius_examples():
    assert spectral_radius([[0.0, 1.0], [0.0, 0.0]]) == 0.0
    assert spectral_radius([[0.0, -1.0], [1.0, 0.0]]) == pytest.approx(1.0)
    assert spectral_radius(0.5 * np.eye(3)) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        spectral_radius(np.ones((2, 3)))


def test_spectrum_examples():
    sp = spectrum(np.diag([2.0, 3.0]))
    assert sorted(sp.eigenvalues.real) == pytest.approx([2.0, 3.0])
    assert sp.eigvec_condition == pytest.approx(1.0)
    sp = spectrum([[0.0, -1.0], [1.0, 0.0]])
    assert sorted(sp.eigenvalues.imag) == pytest.approx([-1.0, 1.0])
    assert sp.eigvec_condition == pytest.approx(1.0)
    assert not spectrum([[1.0, 1.0], [0.0, 1.0]]).diagonalizable


def test_as_matrix_rejects_nonfinite():
    with pytest.raises(ValueError):
        as_matrix([[1.0, np.nan]])


def test_lyapunov_examples():
    assert solve_discrete_lyapunov(0.5, 1.0)[0, 0] == pytest.approx(4.0 / 3.0, rel=1e-14)
    Q = np.array([[2.0, 0.3], [0.3, 1.0]])
    np.testing.assert_allclose(solve_discrete_lyapunov(np.zeros((2, 2)), Q), Q, atol=1e-15)
    np.testing.assert_allclose(solve_discrete_lyapunov(0.9 * np.eye(2), np.eye(2)),
                               np.eye(2) / 0.19, rtol=1e-12)


def test_lyapunov_rejects_unstable():
    with pytest.raises(UnstableF):
        solve_discrete_lyapunov(np.diag([0.5, 1.0]), np.eye(2))


def test_lyapunov_against_scipy_and_residual(rng):
    for _ in range(20):
        n = int(rng.integers(1, 7))
        F = random_stable_system(rng, n, 1, rho=rng.uniform(0.1, 0.99)).A
        S = random_spd(rng, n)
        X = solve_discrete_lyapunov(F, S)
        np.testing.assert_allclose(X, X.T)
        np.testing.assert_allclose(X, scipy.linalg.solve_discrete_lyapunov(F, S), rtol=1e-8, atol=1e-10)
        assert op_norm(F @ X @ F.T - X + S) <= 1e-10 * op_norm(S)


def test_lyapunov_pair_matches_two_solves(rng):
    F = random_stable_system(rng, 4, 1).A
    S, T = random_spd(rng, 4), random_spd(rng, 4)
    X, P = solve_lyapunov_pair(F, S, T)
    np.testing.assert_allclose(X, solve_discrete_lyapunov(F, S), rtol=1e-12)
    np.testing.assert_allclose(P, solve_discrete_lyapunov(F.T, T), rtol=1e-12)


def test_are_scalar_golden_ratio():
    P, K = solve_discrete_are([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    phi = (1 + math.sqrt(5)) / 2
    assert abs(P[0, 0] - phi) <= 1e-9
    assert K[0, 0] == pytest.approx(phi - 1, abs=1e-9)


def test_are_zero_dynamics():
    P, K = solve_discrete_are([[0.0]], [[1.0]], [[1.0]], [[1.0]])
    assert P[0, 0] == pytest.approx(1.0)
    assert K[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_are_against_scipy_and_residual(rng):
    for _ in range(20):
        n, m = int(rng.integers(1, 6)), int(rng.integers(1, 3))
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, m))
        Q, R = random_spd(rng, n), random_spd(rng, m)
        P, K = solve_discrete_are(A, B, Q, R)
        ref = scipy.linalg.solve_discrete_are(A, B, Q, R)
        np.testing.assert_allclose(P, ref, rtol=1e-8, atol=1e-9)
        assert op_norm(riccati_step(P, A, B, Q, R) - P) <= 1e-9 * max(1.0, op_norm(P))
        assert is_schur_stable(A - B @ K)


def test_are_unstabilizable_raises():
    # an unstable mode with no input authority
    with pytest.raises(NoConvergence):
        solve_discrete_are(np.diag([2.0, 0.5]), np.array([[0.0], [1.0]]), np.eye(2), np.eye(1))


def test_expm_examples():
    np.testing.assert_allclose(expm(np.zeros((3, 3))), np.eye(3))
    np.testing.assert_allclose(expm(np.diag([math.log(2.0)] * 2)), 2 * np.eye(2), rtol=1e-14)
    np.testing.assert_allclose(expm([[0.0, 1.0], [0.0, 0.0]]), [[1.0, 1.0], [0.0, 1.0]], atol=1e-15)


def test_expm_against_scipy(rng):
    for scale in (0.01, 1.0, 10.0, 50.0):
        M = rng.standard_normal((5, 5))
        M *= scale / op_norm(M)
        ref = scipy.linalg.expm(M)
        assert op_norm(expm(M) - ref) <= 1e-10 * op_norm(ref)


def test_projection_examples():
    C = np.array([[0.2, 0.1], [0.0, 0.3]])
    np.testing.assert_array_equal(project_opnorm_ball(C, np.zeros((2, 2)), 1.0), C)
    np.testing.assert_allclose(project_opnorm_ball(np.diag([3.0, 0.5]), np.zeros((2, 2)), 1.0),
                               np.diag([1.0, 0.5]), atol=1e-15)
    np.testing.assert_allclose(project_opnorm_ball(np.ones((2, 3)), np.zeros((2, 3)), 0.0), 0.0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(float, (3, 4), elements=finite), arrays(float, (3, 4), elements=finite),
       st.floats(0.0, 5.0))
def test_projection_feasible_and_idempotent(C, center, q):
    P = project_opnorm_ball(C, center, q)
    assert op_norm(P - center) <= q + 1e-10 * (1 + q + op_norm(C - center))
    np.testing.assert_allclose(project_opnorm_ball(P, center, q), P, atol=1e-9)


def test_projection_is_frobenius_nearest(rng):
    # no sampled feasible point is closer than the projection
    C = 3 * rng.standard_normal((2, 3))
    center = np.zeros((2, 3))
    P = project_opnorm_ball(C, center, 1.0)
    d = np.linalg.norm(C - P)
    for _ in range(2000):
        Z = rng.standard_normal((2, 3))
        Z *= rng.uniform() / op_norm(Z)
        assert np.linalg.norm(C - Z) >= d - 1e-12
