import numpy as np
import pytest

from cpcontrol.systems import DynamicsPair


def random_stable_system(rng, n, m, rho=0.9):
    """Random discrete pair whose open loop has spectral radius rho, so K = 0 stabilizes it."""
    A = rng.standard_normal((n, n))
    A *= rho / max(np.abs(np.linalg.eigvals(A)))
    B = rng.standard_normal((n, m))
    return DynamicsPair(A, B)


def random_spd(rng, n, floor=0.1):
    M = rng.standard_normal((n, n))
    return M @ M.T / n + floor * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_closed_loop_instance(rng, n, m, rho=0.9):
    """(sys, K) with A - BK equal to a random matrix of spectral radius rho."""
    M = random_stable_system(rng, n, m, rho).A
    B = rng.standard_normal((n, m))
    K = rng.standard_normal((m, n))
    return DynamicsPair(M + B @ K, B), K
