"""Comparison controllers: discrete H-infinity synthesis and data-free margin methods.

The margin methods pick a pair of structured perturbation directions, grow
their magnitudes until a loss of stability, and then design an LQR controller
for multiplicative noise with those magnitudes as noise standard deviations
(LQRm).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, Infeasible, MeanSquareUnstable, NoConvergence
from .numkernel import (STABILITY_EPS, as_matrix, is_schur_stable, op_norm, riccati_doubling,
                        solve_discrete_are, spectral_radius)
from .systems import DynamicsPair

GAMMA_LO, GAMMA_HI = 1e-2, 1e4
GAMMA_REL_WIDTH = 1e-3
GAMMA_BACKOFF = 1.05

RANDOM, ROW_COL = "random", "row_col"
VARIANTS = (RANDOM, ROW_COL)
CRITICAL, OL_MSS_WEAK, OL_MSUS = "critical", "ol_mss_weak", "ol_msus"
STRATEGIES = (CRITICAL, OL_MSS_WEAK, OL_MSUS)
N_DIRECTIONS = 2
SCALE_MAX_ITER = 200
LQRM_RESTARTS = 50


# --------------------------------------------------------------------------
# H-infinity

def _game_riccati(sys: DynamicsPair, Q, R, gamma: float):
    """Fixed point P of the min-max Riccati map, or None when gamma is infeasible.

    The map ``P -> Q + A^T P (I + (B R^-1 B^T - gamma^-2 I) P)^-1 A`` is the
    game form of the recursion; gamma^2 I - P must stay positive definite.
    """
    A, B = sys.A, sys.B
    n = sys.n
    g2 = gamma * gamma
    G = B @ np.linalg.solve(R, B.T) - np.eye(n) / g2

    def check(P):
        if np.min(np.linalg.eigvalsh(g2 * np.eye(n) - P)) <= 0:
            raise NoConvergence("gamma^2 I - P lost definiteness")

    try:
        P = riccati_doubling(A, G, Q, check=check)
    except (NoConvergence, np.linalg.LinAlgError):
        return None
    if np.min(np.linalg.eigvalsh(g2 * np.eye(n) - P)) <= 0:
        return None
    Pt = P + P @ np.linalg.solve(g2 * np.eye(n) - P, P)
    Pt = 0.5 * (Pt + Pt.T)
    resid = Q + A.T @ Pt @ A - A.T @ Pt @ B @ np.linalg.solve(R + B.T @ Pt @ B, B.T @ Pt @ A) - P
    if op_norm(resid) > 1e-6 * max(1.0, op_norm(P)):
        return None
    K = np.linalg.solve(R + B.T @ Pt @ B, B.T @ Pt @ A)
    if not is_schur_stable(A - B @ K):
        return None
    return P, K


def hinf_feasible(sys: DynamicsPair, Q, R, gamma: float) -> bool:
    return _game_riccati(sys, as_matrix(Q), as_matrix(R), gamma) is not None


def hinf_gain(sys: DynamicsPair, Q, R, gamma: float) -> np.ndarray:
    out = _game_riccati(sys, as_matrix(Q), as_matrix(R), gamma)
    if out is None:
        raise Infeasible(f"gamma={gamma:g} is infeasible")
    return out[1]


def hinf_min_gamma(sys: DynamicsPair, Q, R, lo: float = GAMMA_LO, hi: float = GAMMA_HI,
                   rel_width: float = GAMMA_REL_WIDTH) -> float:
    """Smallest feasible gamma up to ``rel_width``, found by bisection in log scale."""
    Q, R = as_matrix(Q), as_matrix(R)
    if not hinf_feasible(sys, Q, R, hi):
        raise Infeasible(f"no gamma <= {hi:g} is feasible")
    if hinf_feasible(sys, Q, R, lo):
        return lo
    while hi / lo > 1.0 + rel_width:
        mid = math.sqrt(lo * hi)
        if hinf_feasible(sys, Q, R, mid):
            hi = mid
        else:
            lo = mid
    return hi


def hinf_synthesize(sys: DynamicsPair, Q, R, gamma="auto") -> np.ndarray:
    """Suboptimal H-infinity state feedback.

    With ``gamma="auto"`` the attenuation level is 1.05 times the smallest
    feasible level found by bisection.
    """
    if isinstance(gamma, str):
        if gamma != "auto":
            raise ConfigError(f"gamma must be a number or 'auto', got {gamma!r}")
        gamma = GAMMA_BACKOFF * hinf_min_gamma(sys, Q, R)
    return hinf_gain(sys, Q, R, float(gamma))


# --------------------------------------------------------------------------
# margin methods

@dataclass(frozen=True)
class PerturbationBasis:
    A_dirs: tuple
    B_dirs: tuple
    variant: str


@dataclass(frozen=True)
class MarginScales:
    delta: tuple
    gamma: tuple
    strategy: str
    rho: float
    nu: float
    iterations: int = 0
    saturated: bool = False


def _row_col(rows: int, cols: int, rng) -> np.ndarray:
    M = np.zeros((rows, cols))
    M[rng.integers(rows), :] = 1.0
    M[:, rng.integers(cols)] = 1.0
    return M


def margin_perturbations(variant: str, n: int, m: int, rng) -> PerturbationBasis:
    """Two A directions and two B directions.

    ``random``: standard normal entries. ``row_col``: one random row and one
    random column set to 1, zeros elsewhere.
    """
    if variant == RANDOM:
        A_dirs = tuple(rng.standard_normal((n, n)) for _ in range(N_DIRECTIONS))
        B_dirs = tuple(rng.standard_normal((n, m)) for _ in range(N_DIRECTIONS))
    elif variant == ROW_COL:
        A_dirs = tuple(_row_col(n, n, rng) for _ in range(N_DIRECTIONS))
        B_dirs = tuple(_row_col(n, m, rng) for _ in range(N_DIRECTIONS))
    else:
        raise ConfigError(f"unknown perturbation variant {variant!r}")
    return PerturbationBasis(A_dirs, B_dirs, variant)


def _perturbed(sys: DynamicsPair, basis: PerturbationBasis, delta, gamma):
    A = sys.A + sum(d * Ai for d, Ai in zip(delta, basis.A_dirs))
    B = sys.B + sum(g * Bj for g, Bj in zip(gamma, basis.B_dirs))
    return A, B


def _perturbed_unstable(sys, basis, delta, gamma, strategy, Q, R) -> bool:
    A, B = _perturbed(sys, basis, delta, gamma)
    if strategy == CRITICAL:
        try:
            solve_discrete_are(A, B, Q, R)
        except (NoConvergence, np.linalg.LinAlgError):
            return True
        # The ARE gain stabilizes the perturbed pair whenever it exists.
        return False
    return not is_schur_stable(A)


def margin_scale(sys: DynamicsPair, basis: PerturbationBasis, strategy: str, rho: float = 1.1,
                 nu: float = 0.5, Q=None, R=None, max_iter: int = SCALE_MAX_ITER) -> MarginScales:
    """Grow all scales from 1 by the factor rho until the perturbed loop is unstable."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown margin strategy {strategy!r}")
    if rho <= 1.0 or not 0.0 < nu < 1.0:
        raise ConfigError("need rho > 1 and 0 < nu < 1")
    Q = np.eye(sys.n) if Q is None else as_matrix(Q)
    R = np.eye(sys.m) if R is None else as_matrix(R)
    p, q = len(basis.A_dirs), len(basis.B_dirs)
    scale = 1.0
    saturated = True
    it = 0
    for it in range(max_iter + 1):
        if _perturbed_unstable(sys, basis, [scale] * p, [scale] * q, strategy, Q, R):
            saturated = False
            break
        if it < max_iter:
            scale *= rho
    factor = nu if strategy == OL_MSS_WEAK else 1.0
    return MarginScales(tuple([factor * scale] * p), tuple([factor * scale] * q), strategy, rho, nu,
                        it, saturated)


def _ms_operator(sys, basis, scales, K) -> tuple[np.ndarray, list]:
    """Kronecker matrix of P -> sum_k M_k^T P M_k over the closed loop and noise terms."""
    K = np.atleast_2d(K)
    mats = [sys.A - sys.B @ K]
    mats += [d * Ai for d, Ai in zip(scales.delta, basis.A_dirs)]
    mats += [g * (Bj @ K) for g, Bj in zip(scales.gamma, basis.B_dirs)]
    T = sum(np.kron(M.T, M.T) for M in mats)
    return T, mats


def lqrm_cost(K, sys: DynamicsPair, basis: PerturbationBasis, scales: MarginScales, Q, R, X0) -> float:
    """Expected cost under multiplicative noise; +inf when not mean-square stable."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    T, _ = _ms_operator(sys, basis, scales, K)
    if not np.all(np.isfinite(T)) or spectral_radius(T) >= 1.0 - STABILITY_EPS:
        return math.inf
    n = sys.n
    S = Q + K.T @ R @ K
    P = np.linalg.solve(np.eye(n * n) - T, S.reshape(-1)).reshape(n, n)
    J = float(np.trace(0.5 * (P + P.T) @ X0))
    return J if math.isfinite(J) and J >= 0 else math.inf


def _fd_grad(f, K, h=1e-6):
    g = np.zeros_like(K)
    for idx in np.ndindex(*K.shape):
        E = np.zeros_like(K)
        E[idx] = h
        fp, fm = f(K + E), f(K - E)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            return None
        g[idx] = (fp - fm) / (2 * h)
    return g


def lqrm_synthesize(sys: DynamicsPair, basis: PerturbationBasis, scales: MarginScales, Q, R, X0,
                    T_K: int = 500, tol: float = 1e-6, rng=None) -> np.ndarray:
    """Policy-gradient minimization of the multiplicative-noise cost.

    Starts at the LQR gain; if that is not mean-square stabilizing, random
    restarts around it are tried. Gradients are central differences and
    steps use Armijo backtracking.
    """
    Q, R, X0 = as_matrix(Q), as_matrix(R), as_matrix(X0)

    def f(K):
        return lqrm_cost(K, sys, basis, scales, Q, R, X0)

    try:
        K = solve_discrete_are(sys.A, sys.B, Q, R)[1]
    except NoConvergence:
        K = np.zeros((sys.m, sys.n))
    J = f(K)
    if not math.isfinite(J):
        rng = rng if rng is not None else np.random.default_rng(0)
        base = K
        for _ in range(LQRM_RESTARTS):
            sigma = 10.0 ** rng.uniform(-2, 1) * max(1.0, op_norm(base))
            cand = base + sigma * rng.standard_normal(base.shape)
            Jc = f(cand)
            if math.isfinite(Jc):
                K, J = cand, Jc
                break
        else:
            raise MeanSquareUnstable("no mean-square stabilizing gain found")
    step = 1.0
    for _ in range(T_K):
        g = _fd_grad(f, K)
        if g is None:
            break
        gn2 = float(np.sum(g * g))
        if math.sqrt(gn2) <= tol * max(1.0, J):
            break
        step = min(1.0, 4.0 * step)
        for _ in range(60):
            K_try = K - step * g
            J_try = f(K_try)
            if J_try <= J - 1e-4 * step * gn2:
                break
            step *= 0.5
        else:
            break
        if J - J_try <= 1e-12 * J:
            K, J = K_try, J_try
            break
        K, J = K_try, J_try
    return K


def margin_method(sys: DynamicsPair, variant: str, strategy: str, Q, R, X0, rng,
                  rho: float = 1.1, nu: float = 0.5, T_K: int = 500):
    """Full margin baseline: basis, scale search and LQRm synthesis."""
    basis = margin_perturbations(variant, sys.n, sys.m, rng)
    scales = margin_scale(sys, basis, strategy, rho, nu, Q, R)
    K = lqrm_synthesize(sys, basis, scales, Q, R, X0, T_K=T_K, rng=rng)
    return K, scales
