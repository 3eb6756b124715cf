import math

import numpy as np
import pytest

from cpcontrol.baselines import (CRITICAL, GAMMA_BACKOFF, OL_MSS_WEAK, OL_MSUS, RANDOM, ROW_COL, MarginScales,
                                 PerturbationBasis, _row_col, hinf_feasible, hinf_gain, hinf_min_gamma,
                                 hinf_synthesize, lqrm_cost, lqrm_synthesize, margin_method,
                                 margin_perturbations, margin_scale)
from cpcontrol.errors import ConfigError, Infeasible, MeanSquareUnstable
from cpcontrol.numkernel import is_schur_stable, solve_discrete_are
from cpcontrol.synthesis import lqr_cost
from cpcontrol.systems import DynamicsPair, is_stabilizing

from .conftest import random_stable_system

ONE = np.eye(1)


def scales(delta, gamma=(), strategy=OL_MSUS):
    return MarginScales(tuple(delta), tuple(gamma), strategy, 1.1, 0.5)


def test_hinf_large_gamma_is_lqr(rng):
    for _ in range(10):
        sys = DynamicsPair(rng.standard_normal((3, 3)), rng.standard_normal((3, 1)))
        _, K = solve_discrete_are(sys.A, sys.B, np.eye(3), ONE)
        np.testing.assert_allclose(hinf_synthesize(sys, np.eye(3), ONE, 1e6), K, atol=1e-4)
    K = hinf_synthesize(DynamicsPair([[1.0]], [[1.0]]), ONE, ONE, 1e6)
    assert K[0, 0] == pytest.approx(0.618034, abs=1e-5)


def test_hinf_feasibility_is_monotone_in_gamma(rng):
    grid = np.logspace(-2, 4, 61)
    for _ in range(20):
        sys = random_stable_system(rng, 3, 1, rho=rng.uniform(0.5, 1.3))
        Q, R = np.eye(3), ONE
        feas = [hinf_feasible(sys, Q, R, g) for g in grid]
        first = feas.index(True)
        assert all(feas[first:])
        g_min = hinf_min_gamma(sys, Q, R)
        lower = grid[first - 1] if first > 0 else 0.0
        assert lower <= g_min <= grid[first] * (1 + 1e-3)
        K = hinf_synthesize(sys, Q, R)
        assert is_stabilizing(K, sys)
        np.testing.assert_allclose(K, hinf_gain(sys, Q, R, GAMMA_BACKOFF * g_min))


def test_hinf_cost_not_below_lqr(rng):
    sys = random_stable_system(rng, 3, 1, rho=1.1)
    K_h = hinf_synthesize(sys, np.eye(3), ONE)
    _, K = solve_discrete_are(sys.A, sys.B, np.eye(3), ONE)
    args = (sys, np.eye(3), ONE, np.eye(3))
    assert lqr_cost(K_h, *args) >= lqr_cost(K, *args) - 1e-9


def test_hinf_errors():
    sys = DynamicsPair([[1.0]], [[1.0]])
    with pytest.raises(Infeasible):
        hinf_gain(sys, ONE, ONE, 1e-3)
    with pytest.raises(ConfigError):
        hinf_synthesize(sys, ONE, ONE, "fast")
    with pytest.raises(Infeasible):
        hinf_min_gamma(DynamicsPair(np.diag([2.0, 0.5]), np.array([[0.0], [1.0]])), np.eye(2), ONE)


class _ZeroIndex:
    def integers(self, k):
        return 0


def test_row_col_direction():
    np.testing.assert_array_equal(_row_col(2, 2, _ZeroIndex()), [[1, 1], [1, 0]])


def test_perturbation_bases(rng):
    b = margin_perturbations(ROW_COL, 4, 2, rng)
    assert len(b.A_dirs) == 2 and len(b.B_dirs) == 2
    for M in b.A_dirs + b.B_dirs:
        rows = np.where(M.all(axis=1))[0]
        cols = np.where(M.all(axis=0))[0]
        assert len(rows) >= 1 and len(cols) >= 1
        mask = np.zeros_like(M)
        mask[rows[0], :] = 1
        mask[:, cols[0]] = 1
        np.testing.assert_array_equal(M, mask)
    b = margin_perturbations(RANDOM, 3, 1, rng)
    assert b.A_dirs[0].shape == (3, 3) and b.B_dirs[0].shape == (3, 1)
    with pytest.raises(ConfigError):
        margin_perturbations("diagonal", 2, 1, rng)


def test_margin_scale_scalar_threshold():
    sys = DynamicsPair([[0.5]], [[1.0]])
    basis = PerturbationBasis((np.eye(1),), (), RANDOM)
    s = margin_scale(sys, basis, OL_MSUS, rho=1.1)
    assert s.delta == (1.0,) and s.iterations == 0 and not s.saturated
    weak = margin_scale(sys, basis, OL_MSS_WEAK, rho=1.1, nu=0.5)
    assert weak.delta == (0.5,)


def test_margin_scale_grows_geometrically():
    sys = DynamicsPair([[0.0]], [[1.0]])
    basis = PerturbationBasis((0.01 * np.eye(1),), (), RANDOM)
    s = margin_scale(sys, basis, OL_MSUS, rho=2.0)
    # 0.01 * 2^k >= 1 first at k = 7
    assert s.delta == (128.0,) and s.iterations == 7


def test_margin_scale_critical_saturates_when_always_stabilizable():
    sys = DynamicsPair([[0.5]], [[1.0]])
    basis = PerturbationBasis((np.eye(1),), (), RANDOM)
    s = margin_scale(sys, basis, CRITICAL, rho=1.5, max_iter=20)
    assert s.saturated and s.iterations == 20


def test_margin_scale_validation():
    sys = DynamicsPair([[0.5]], [[1.0]])
    basis = PerturbationBasis((np.eye(1),), (), RANDOM)
    for kw in ({"strategy": "bogus"}, {"strategy": OL_MSUS, "rho": 1.0}, {"strategy": OL_MSUS, "nu": 1.5}):
        with pytest.raises(ConfigError):
            margin_scale(sys, basis, **kw)


def test_lqrm_scalar_cost():
    sys = DynamicsPair([[0.5]], [[1.0]])
    basis = PerturbationBasis((np.eye(1),), (), RANDOM)
    assert lqrm_cost([[0.0]], sys, basis, scales([0.5]), ONE, ONE, ONE) == pytest.approx(2.0, rel=1e-12)
    # (a - bK)^2 + delta^2 >= 1 is mean-square unstable
    assert lqrm_cost([[0.0]], sys, basis, scales([math.sqrt(0.75)]), ONE, ONE, ONE) == math.inf
    assert lqrm_cost([[0.0]], sys, basis, scales([0.9]), ONE, ONE, ONE) == math.inf


def test_lqrm_zero_scales_is_lqr(rng):
    sys = random_stable_system(rng, 3, 1, rho=1.2)
    basis = margin_perturbations(RANDOM, 3, 1, rng)
    K = lqrm_synthesize(sys, basis, scales([0.0, 0.0], [0.0, 0.0]), np.eye(3), ONE, np.eye(3))
    _, K_are = solve_discrete_are(sys.A, sys.B, np.eye(3), ONE)
    assert np.linalg.norm(K - K_are) <= 1e-6


def test_lqrm_descends_under_noise(rng):
    sys = random_stable_system(rng, 2, 1, rho=0.9)
    basis = margin_perturbations(RANDOM, 2, 1, rng)
    s = scales([0.1, 0.1], [0.1, 0.1])
    Q, R, X0 = np.eye(2), ONE, np.eye(2)
    _, K_are = solve_discrete_are(sys.A, sys.B, Q, R)
    K = lqrm_synthesize(sys, basis, s, Q, R, X0, T_K=200)
    assert lqrm_cost(K, sys, basis, s, Q, R, X0) <= lqrm_cost(K_are, sys, basis, s, Q, R, X0)
    assert is_schur_stable(sys.A - sys.B @ K)


def test_margin_method_end_to_end():
    # a = 0, b = 1: K = 0 is mean-square stabilizing whenever the sampled A noise is small
    sys = DynamicsPair([[0.0]], [[1.0]])
    K, s = margin_method(sys, RANDOM, OL_MSS_WEAK, ONE, ONE, ONE, np.random.default_rng(1), T_K=50)
    assert s.strategy == OL_MSS_WEAK and s.delta == (0.5, 0.5)
    basis = margin_perturbations(RANDOM, 1, 1, np.random.default_rng(1))
    assert math.isfinite(lqrm_cost(K, sys, basis, s, ONE, ONE, ONE))


def test_margin_method_reports_mean_square_instability():
    sys = DynamicsPair([[0.0]], [[1.0]])
    with pytest.raises(MeanSquareUnstable):
        margin_method(sys, RANDOM, OL_MSS_WEAK, ONE, ONE, ONE, np.random.default_rng(0), T_K=50)
