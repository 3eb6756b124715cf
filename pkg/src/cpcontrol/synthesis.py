"""LQR costs and gradients, the conformal min-max synthesis, and margin diagnostics.

For a discrete plant ``x+ = A x + B u`` under ``u = -K x`` the cost is
``J(K, C) = trace((Q + K^T R K) X_K)`` where X_K solves
``(A - BK) X (A - BK)^T - X + X0 = 0``. With ``W = [I; -K]`` the closed loop is
``C W`` for the stacked ``C = [A, B]``, which makes the gradient in C simple.

The robust (CPC) controller minimizes ``phi(K) = max_{C in ball} J(K, C)``:
the inner maximum is found by projected gradient ascent over the
operator-norm ball and the outer problem by gradient steps on K evaluated at
the inner maximizer, with step halving so that phi never increases.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .conformal import UncertaintyBall
from .errors import (ConfigError, NoStableAscentStep, RadiusInfinite, UnstableClosedLoop, UnstableF)
from .numkernel import (STABILITY_EPS, op_norm, project_opnorm_ball, solve_discrete_are,
                        solve_lyapunov_pair, spectrum)
from .systems import DynamicsPair

MAX_HALVINGS = 30


@dataclass(frozen=True)
class SynthesisConfig:
    eta_K: float = 1e-3
    eta_C: float = 1e-2
    T_K: int = 500
    T_C: int = 50
    grad_tol: float = 1e-6
    restart_on_instability: bool = True
    # Early stop when phi improves by less than rel_tol * phi over one step.
    rel_tol: float = 1e-9
    # Ball members checked during backtracking (plus the center and extremes).
    n_check_samples: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.eta_K <= 0 or self.eta_C <= 0:
            raise ConfigError("step sizes must be positive")
        if self.T_K < 1 or self.T_C < 1:
            raise ConfigError("iteration caps must be >= 1")
        if self.grad_tol < 0 or self.rel_tol < 0 or self.n_check_samples < 0:
            raise ConfigError("tolerances and sample counts must be nonnegative")


@dataclass(frozen=True)
class MarginCertificate:
    r: float | None
    diagonalizable: bool
    closed_loop_eigs: np.ndarray
    kappa_U: float


@dataclass
class SynthesisResult:
    K: np.ndarray
    trace: list = field(default_factory=list)
    stop_reason: str = ""
    worst_case: DynamicsPair | None = None

    @property
    def phi(self) -> list[float]:
        return [row["phi"] for row in self.trace]

    def __iter__(self):
        # Allows ``K, trace = cpc_synthesize(...)``.
        return iter((self.K, self.trace))


def stack_W(K) -> np.ndarray:
    """W = [I; -K], so that C W = A - B K."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    return np.vstack([np.eye(K.shape[1]), -K])


def _closed_loop(K, sys: DynamicsPair):
    return sys.A - sys.B @ np.atleast_2d(K)


def _solve_pair(K, sys, Q, R, X0):
    """(J, X_K, P_K) or raises UnstableClosedLoop."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    M = _closed_loop(K, sys)
    S = Q + K.T @ R @ K
    try:
        X, P = solve_lyapunov_pair(M, X0, S)
    except UnstableF as exc:
        raise UnstableClosedLoop(str(exc)) from exc
    J = float(np.trace(S @ X))
    if not math.isfinite(J):
        raise UnstableClosedLoop("cost overflow")
    return J, X, P


def lqr_cost(K, sys: DynamicsPair, Q, R, X0) -> float:
    """Infinite-horizon cost; +inf when A - BK is not Schur stable."""
    try:
        return _solve_pair(K, sys, Q, R, X0)[0]
    except UnstableClosedLoop:
        return math.inf


def grad_K(K, sys: DynamicsPair, Q, R, X0) -> np.ndarray:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    _, X, P = _solve_pair(K, sys, Q, R, X0)
    A, B = sys.A, sys.B
    return 2.0 * ((R + B.T @ P @ B) @ K - B.T @ P @ A) @ X


def grad_C(K, sys: DynamicsPair, Q, R, X0) -> np.ndarray:
    _, X, P = _solve_pair(K, sys, Q, R, X0)
    W = stack_W(K)
    return 2.0 * P @ (sys.C @ W) @ X @ W.T


def nominal_lqr(sys: DynamicsPair, Q, R) -> np.ndarray:
    return solve_discrete_are(sys.A, sys.B, Q, R)[1]


# --------------------------------------------------------------------------
# inner maximization over the ball

def inner_max_C(K, ball: UncertaintyBall, cfg: SynthesisConfig, Q, R, X0,
                return_value: bool = False):
    """Projected gradient ascent on J(K, .) over the ball, started at its center.

    A step is accepted when the cost stays finite and does not decrease;
    otherwise it is halved (at most ``MAX_HALVINGS`` times). Returns the best
    iterate, and its cost when ``return_value`` is set.
    """
    if math.isinf(ball.radius):
        raise RadiusInfinite("uncertainty radius is infinite")
    n = ball.center.n
    center = ball.center.C
    C = center.copy()
    try:
        J, X, P = _solve_pair(K, ball.center, Q, R, X0)
    except UnstableClosedLoop as exc:
        raise NoStableAscentStep("K does not stabilize the ball center") from exc
    if ball.radius > 0:
        W = stack_W(K)
        for _ in range(cfg.T_C):
            g = 2.0 * P @ (C @ W) @ X @ W.T
            if not np.any(g):
                break
            step = cfg.eta_C
            moved = False
            for _ in range(MAX_HALVINGS):
                C_try = project_opnorm_ball(C + step * g, center, ball.radius)
                try:
                    J_try, X_try, P_try = _solve_pair(K, DynamicsPair.from_C(C_try, n), Q, R, X0)
                except UnstableClosedLoop:
                    J_try = -math.inf
                if J_try >= J:
                    moved = np.linalg.norm(C_try - C) > 1e-14 * (1.0 + np.linalg.norm(C))
                    improvement = J_try - J
                    C, J, X, P = C_try, J_try, X_try, P_try
                    break
                step *= 0.5
            if not moved or improvement <= 1e-12 * abs(J):
                break
    best = DynamicsPair.from_C(C, n)
    return (best, J) if return_value else best


# --------------------------------------------------------------------------
# sampled universal-stabilization check

def _ball_samples(ball: UncertaintyBall, n_samples: int, rng) -> np.ndarray:
    """Center, 2(n+m) boundary extremes, and uniform-in-radius random members."""
    center = ball.center.C
    n, d = center.shape
    q = ball.radius
    out = [center]
    if q > 0:
        u = np.ones(n) / math.sqrt(n)
        for j in range(d):
            E = np.zeros((n, d))
            E[:, j] = u
            out.append(center + q * E)
            out.append(center - q * E)
        dim = n * d
        for _ in range(n_samples):
            G = rng.standard_normal((n, d))
            G /= op_norm(G)
            out.append(center + q * rng.uniform() ** (1.0 / dim) * G)
    return np.array(out)


def _spectral_radii(Cs: np.ndarray, K) -> np.ndarray:
    Ms = Cs @ stack_W(K)
    finite = np.all(np.isfinite(Ms), axis=(1, 2))
    out = np.full(len(Cs), math.inf)
    if np.any(finite):
        out[finite] = np.max(np.abs(np.linalg.eigvals(Ms[finite])), axis=-1)
    return out


def universal_stab_check(K, ball: UncertaintyBall, n_samples: int, rng) -> tuple[bool, float]:
    """Whether K stabilizes every sampled member of the ball, and the largest rho seen."""
    if math.isinf(ball.radius):
        raise RadiusInfinite("uncertainty radius is infinite")
    rhos = _spectral_radii(_ball_samples(ball, n_samples, rng), K)
    worst = float(np.max(rhos))
    return bool(worst < 1.0 - STABILITY_EPS), worst


# --------------------------------------------------------------------------
# robust synthesis

def robust_synthesize(ball: UncertaintyBall, Q, R, X0, cfg: SynthesisConfig | None = None,
                      rng=None) -> SynthesisResult:
    """Min-max synthesis over an explicit ball; see :func:`cpc_synthesize`."""
    cfg = cfg or SynthesisConfig()
    if math.isinf(ball.radius):
        raise RadiusInfinite("uncertainty radius is infinite; raise alpha or calibration size")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    center = ball.center
    K = nominal_lqr(center, Q, R)
    Cstar, phi = inner_max_C(K, ball, cfg, Q, R, X0, return_value=True)
    result = SynthesisResult(K, [], "", Cstar)
    if ball.radius == 0:
        result.trace.append({"iterate": 0, "phi": phi, "grad_norm": op_norm(grad_K(K, center, Q, R, X0)), "step": 0.0})
        result.stop_reason = "zero_radius"
        return result

    samples = _ball_samples(ball, cfg.n_check_samples, rng)
    stable_mask = _spectral_radii(samples, K) < 1.0 - STABILITY_EPS
    result.stop_reason = "max_iter"
    for it in range(cfg.T_K + 1):
        g = grad_K(K, Cstar, Q, R, X0)
        gnorm = float(np.linalg.norm(g))
        if it == 0:
            result.trace.append({"iterate": 0, "phi": phi, "grad_norm": gnorm, "step": 0.0})
        if it == cfg.T_K:
            break
        if gnorm <= cfg.grad_tol:
            result.stop_reason = "grad_tol"
            break
        step = cfg.eta_K
        accepted = None
        for _ in range(MAX_HALVINGS):
            K_try = K - step * g
            rhos = _spectral_radii(samples, K_try)
            still = rhos < 1.0 - STABILITY_EPS
            # Center must stay stabilized and no sampled member may be lost.
            if still[0] and np.all(still[stable_mask]):
                try:
                    C_try, phi_try = inner_max_C(K_try, ball, cfg, Q, R, X0, return_value=True)
                except NoStableAscentStep:
                    phi_try = math.inf
                if phi_try <= phi:
                    accepted = (K_try, C_try, phi_try, still)
                    break
            if not cfg.restart_on_instability:
                break
            step *= 0.5
        if accepted is None:
            result.stop_reason = "no_descent_step"
            break
        K_new, Cstar, phi_new, stable_mask = accepted
        gain = phi - phi_new
        K, phi = K_new, phi_new
        result.trace.append({"iterate": it + 1, "phi": phi, "grad_norm": gnorm, "step": step})
        if gain <= cfg.rel_tol * abs(phi):
            result.stop_reason = "rel_tol"
            break
    result.K = K
    result.worst_case = Cstar
    return result


def cpc_synthesize(theta, model, calib, task, cfg: SynthesisConfig | None = None, rng=None) -> SynthesisResult:
    """Robust controller for design theta over its conformal ball.

    The outer loop starts at the LQR gain of the predicted dynamics f(theta).
    """
    from .conformal import make_region

    if math.isinf(calib.q_hat):
        raise RadiusInfinite("conformal radius is infinite; raise alpha or calibration size")
    ball = make_region(model, theta, calib)
    return robust_synthesize(ball, task.Q, task.R, task.X0, cfg, rng)


def margin_certificate(sys: DynamicsPair, K) -> MarginCertificate:
    """Radius r within which K keeps every C + Delta (||Delta||_op < r) stable.

    ``r = min_i (1 - |lambda_i|) / (kappa(U) ||W||_op)`` for the closed loop
    ``M = A - BK = U diag(lambda) U^{-1}``. By Bauer-Fike a perturbation of C
    moves each eigenvalue of M by at most ``kappa(U) ||Delta W||``.
    ``r`` is None when M is numerically defective.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    sp = spectrum(_closed_loop(K, sys))
    if not sp.diagonalizable:
        return MarginCertificate(None, False, sp.eigenvalues, sp.eigvec_condition)
    slack = float(np.min(1.0 - np.abs(sp.eigenvalues)))
    r = max(slack, 0.0) / (sp.eigvec_condition * op_norm(stack_W(K)))
    return MarginCertificate(r, True, sp.eigenvalues, sp.eigvec_condition)


TRACE_COLUMNS = ("iterate", "phi", "grad_norm", "step")


def trace_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in trace:
        w.writerow([int(row["iterate"]), repr(float(row["phi"])), repr(float(row["grad_norm"])),
                    repr(float(row["step"]))])
    return buf.getvalue()
