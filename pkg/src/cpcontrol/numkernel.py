"""Dense linear-algebra and control-equation kernels for small systems.

Everything here is a pure function of numpy arrays. Sizes are small (state
dimension at most ~16), so direct dense methods are used throughout: the
discrete Lyapunov equation is solved through its Kronecker (vectorized) form
and the discrete ARE through the Riccati recursion, accelerated by doubling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import NoConvergence, UnstableF

# Stability threshold: a matrix is treated as Schur stable iff rho < 1 - STABILITY_EPS.
STABILITY_EPS = 1e-9
# Eigenvector matrices with condition number above this are treated as defective.
DIAGONALIZABLE_COND = 1e12
ARE_TOL = 1e-12
ARE_MAX_ITER = 10000
LYAP_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigvec_condition: float
    diagonalizable: bool


def as_matrix(M) -> np.ndarray:
    """Coerce to a finite 2-D float array."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def _require_square(M: np.ndarray) -> None:
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"square matrix required, got shape {M.shape}")


def op_norm(M) -> float:
    """Operator (spectral) norm, the largest singular value."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def spectral_radius(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    _require_square(M)
    if not np.all(np.isfinite(M)):
        return math.inf
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def is_schur_stable(M, eps: float = STABILITY_EPS) -> bool:
    return spectral_radius(M) < 1.0 - eps


def spectrum(M, cond_threshold: float = DIAGONALIZABLE_COND) -> Spectrum:
    """Eigenvalues plus the condition number of the (unit-column) eigenvector matrix."""
    M = as_matrix(M)
    _require_square(M)
    w, U = np.linalg.eig(M)
    s = np.linalg.svd(U, compute_uv=False)
    cond = math.inf if s[-1] == 0.0 else float(s[0] / s[-1])
    return Spectrum(eigenvalues=w, eigvec_condition=cond, diagonalizable=cond <= cond_threshold)


def _lyap_operator(F, eps):
    F = np.atleast_2d(np.asarray(F, dtype=float))
    _require_square(F)
    if not np.all(np.isfinite(F)) or spectral_radius(F) >= 1.0 - eps:
        raise UnstableF("spectral radius of F is >= 1")
    d = F.shape[0]
    # Row-major vec: vec(F X F^T) = (F kron F) vec(X), vec(F^T X F) = (F kron F)^T vec(X).
    return F, lu_factor(np.eye(d * d) - np.kron(F, F))


def _lyap_solve(F, lu, S, trans: int) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    d = F.shape[0]
    X = lu_solve(lu, S.reshape(-1), trans=trans).reshape(d, d)
    X = 0.5 * (X + X.T)
    # One step of iterative refinement when the residual is poor.
    G = F if trans == 0 else F.T
    res = G @ X @ G.T - X + S
    scale = max(np.linalg.norm(S), np.finfo(float).tiny)
    if np.linalg.norm(res) > LYAP_RESIDUAL_TOL * scale:
        dX = lu_solve(lu, res.reshape(-1), trans=trans).reshape(d, d)
        X = X + 0.5 * (dX + dX.T)
    return X


def solve_discrete_lyapunov(F, S, eps: float = STABILITY_EPS) -> np.ndarray:
    """Solve ``F X F^T - X + S = 0`` for X.

    Raises ``UnstableF`` when ``rho(F) >= 1 - eps``; callers treat that as an
    infinite cost.
    """
    F, lu = _lyap_operator(F, eps)
    return _lyap_solve(F, lu, S, 0)


def solve_lyapunov_pair(F, S, T, eps: float = STABILITY_EPS):
    """Solve ``F X F^T - X + S = 0`` and ``F^T P F - P + T = 0`` with one factorization."""
    F, lu = _lyap_operator(F, eps)
    return _lyap_solve(F, lu, S, 0), _lyap_solve(F, lu, T, 1)


def riccati_step(P, A, B, Q, R) -> np.ndarray:
    """One application of the discrete Riccati map to P."""
    BtP = B.T @ P
    G = R + BtP @ B
    AtPB = A.T @ P @ B
    Pn = Q + A.T @ P @ A - AtPB @ np.linalg.solve(G, BtP @ A)
    return 0.5 * (Pn + Pn.T)


def riccati_doubling(A, G, H, tol: float = ARE_TOL, max_iter: int = ARE_MAX_ITER,
                     blowup: float = 1e15, check=None) -> np.ndarray:
    """Fixed point of ``P = H + A^T P (I + G P)^{-1} A`` by the doubling recursion.

    After k doubling steps the iterate equals the plain Riccati recursion after
    2^k steps started from zero. ``max_iter`` caps the number of doubling
    steps, which is additionally capped at 60 (2^60 recursion steps).
    ``check`` is an optional callable run on every iterate; it may raise to
    abort.
    """
    n = A.shape[0]
    I = np.eye(n)
    Ak, Gk, Hk = A.copy(), G.copy(), H.copy()
    n_doublings = 0
    while n_doublings < min(max_iter, 60):
        Winv = np.linalg.inv(I + Gk @ Hk)
        Ak_W = Ak @ Winv
        H_next = Hk + Ak.T @ Hk @ Winv @ Ak
        Gk = Gk + Ak_W @ Gk @ Ak.T
        Ak = Ak_W @ Ak
        H_next = 0.5 * (H_next + H_next.T)
        Gk = 0.5 * (Gk + Gk.T)
        n_doublings += 1
        if not np.all(np.isfinite(H_next)) or op_norm(H_next) > blowup:
            raise NoConvergence("Riccati recursion diverged")
        if check is not None:
            check(H_next)
        delta = op_norm(H_next - Hk)
        Hk = H_next
        if delta <= tol * max(1.0, op_norm(Hk)):
            return Hk
    raise NoConvergence(f"Riccati recursion did not converge in {n_doublings} doubling steps")


def solve_discrete_are(A, B, Q, R, tol: float = ARE_TOL, max_iter: int = ARE_MAX_ITER,
                       polish_steps: int = 2):
    """Stabilizing solution of the discrete ARE and its LQR gain.

    Returns ``(P, K)`` with ``K = (R + B^T P B)^{-1} B^T P A``. Raises
    ``NoConvergence`` when the recursion fails or the resulting closed loop is
    not Schur stable (the instance is not stabilizable).
    """
    A = as_matrix(A)
    B = as_matrix(B)
    Q = as_matrix(Q)
    R = as_matrix(R)
    G = B @ np.linalg.solve(R, B.T)
    try:
        P = riccati_doubling(A, G, Q, tol=tol, max_iter=max_iter)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(f"singular step in Riccati recursion: {exc}") from exc
    for _ in range(polish_steps):
        P = riccati_step(P, A, B, Q, R)
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if not is_schur_stable(A - B @ K):
        raise NoConvergence("ARE solution does not stabilize (A, B)")
    return P, K


def expm(M) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a truncated Taylor series."""
    M = as_matrix(M)
    _require_square(M)
    n = M.shape[0]
    norm = op_norm(M)
    s = 0 if norm <= 0.5 else int(math.ceil(math.log2(norm / 0.5)))
    X = M / (2.0 ** s)
    E = np.eye(n)
    term = np.eye(n)
    for k in range(1, 30):
        term = term @ X / k
        E = E + term
        if op_norm(term) <= 1e-18 * op_norm(E):
            break
    for _ in range(s):
        E = E @ E
    return E


def project_opnorm_ball(C, center, q: float) -> np.ndarray:
    """Frobenius-nearest point of the operator-norm ball ``||X - center||_op <= q``.

    Computed by clipping the singular values of ``C - center`` at q.
    """
    C = np.asarray(C, dtype=float)
    center = np.asarray(center, dtype=float)
    if C.shape != center.shape:
        raise ValueError(f"shape mismatch {C.shape} vs {center.shape}")
    if q < 0:
        raise ValueError("radius must be nonnegative")
    D = C - center
    U, s, Vt = np.linalg.svd(D, full_matrices=False)
    if s.size == 0 or s[0] <= q:
        return C.copy()
    return center + (U * np.minimum(s, q)) @ Vt
